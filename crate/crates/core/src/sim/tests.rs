use super::*;
use crate::catalog::{Catalog, ControlMode, DeploymentScale, ServiceCategory, ServiceDescriptor};
use crate::kpi::compute_kpis;
use crate::testutil;

fn demand(entries: Vec<DemandEntry>) -> DemandProfile {
    DemandProfile {
        schema_version: DEMAND_SCHEMA_VERSION,
        entries,
    }
}

fn trips(o: &str, d: &str, user_type: EndUserType, rate: f64, start: f64, end: f64) -> DemandEntry {
    DemandEntry {
        origin: NodeId::new(o),
        destination: NodeId::new(d),
        user_type,
        rate,
        start,
        end,
    }
}

fn catalog_with(id: &str, users: &[EndUserType]) -> Catalog {
    let s = ServiceDescriptor {
        id: ServiceId::new(id),
        name: id.to_owned(),
        category: ServiceCategory::Cits,
        primary_objective: String::new(),
        contributions: Default::default(),
        indirect: false,
        applicable_elements: Default::default(),
        bundled_for: users.iter().copied().collect(),
        deployment_scale: DeploymentScale::LargeScale,
        control_mode: ControlMode::ViaServiceProvider,
        tm_suitable: true,
        effect_profile: None,
        inventory: true,
    };
    Catalog::new("t", vec![s], vec![]).unwrap()
}

fn config(dt: f64) -> SimConfig {
    SimConfig {
        dt,
        ..SimConfig::default()
    }
}

fn sim(net: RoadNetwork, d: DemandProfile, dt: f64) -> Simulation {
    Simulation::new(Arc::new(net), &d, &Catalog::empty(), config(dt), 1).unwrap()
}

fn run_to_end(s: &mut Simulation, max: u64) {
    while !s.is_finished() && s.tick() < max {
        s.step();
    }
}

#[test]
fn saturated_link_discharges_exactly_its_capacity() {
    // 130 vehicles released within the first second, 1800 veh/h, 60 s ticks.
    let d = demand(vec![trips(
        "a",
        "b",
        EndUserType::Driver,
        130.0 * 3600.0,
        0.0,
        1.0,
    )]);
    let mut s = sim(testutil::single_link(1800.0), d, 60.0);
    s.step();
    s.step();
    s.step();
    let st = s.state();
    let l = st.link("L").unwrap();
    assert!(l.queue as usize + l.outflow as usize >= 100);
    assert_eq!(l.outflow, 30);
}

#[test]
fn zero_demand_steps_an_empty_state() {
    let mut s = sim(
        testutil::single_link(1800.0),
        DemandProfile::default(),
        10.0,
    );
    let before = s.state();
    assert_eq!(before.population, 0);
    s.step();
    let after = s.state();
    assert_eq!(after.tick, 1);
    assert_eq!(after.links[0].vehicles_on_link, 0);
    assert_eq!(after.created, 0);
    assert!(s.is_finished());
}

#[test]
fn incident_halves_discharge() {
    let d = demand(vec![trips(
        "a",
        "b",
        EndUserType::Driver,
        3600.0 * 50.0,
        0.0,
        10.0,
    )]);
    let outflow = |factor: Option<f64>| {
        let mut s = sim(testutil::single_link(1800.0), d.clone(), 10.0);
        if let Some(f) = factor {
            s.add_incident(Incident {
                id: "I".into(),
                link: LinkId::new("L"),
                capacity_factor: f,
                start: 0,
                end: 1000,
            })
            .unwrap();
        }
        let mut total = 0;
        for i in 0..25 {
            s.step();
            if i >= 5 {
                total += s.state().links[0].outflow;
            }
        }
        total
    };
    // Every vehicle is ready from tick 5 on: 20 saturated ticks at 5 veh
    // per tick versus 2.5.
    assert_eq!(outflow(None), 100);
    assert_eq!(outflow(Some(0.5)), 50);
}

#[test]
fn free_flow_trips_have_zero_delay() {
    let d = demand(vec![trips("o", "d", EndUserType::Driver, 60.0, 0.0, 600.0)]);
    let mut s = sim(testutil::diamond(), d, 10.0);
    run_to_end(&mut s, 1000);
    let k = compute_kpis(s.log());
    assert_eq!(k.throughput, 10);
    assert_eq!(k.total_delay, 0.0);
}

#[test]
fn conservation_holds_every_tick() {
    let d = demand(vec![
        trips("o", "d", EndUserType::Driver, 2500.0, 0.0, 900.0),
        trips("o", "d", EndUserType::VRU, 40.0, 0.0, 900.0),
    ]);
    let mut s = sim(testutil::diamond(), d, 10.0);
    for _ in 0..400 {
        s.step();
        let st = s.state();
        assert_eq!(st.created, st.on_network + st.completed);
        for l in &st.links {
            assert!(l.queue <= l.vehicles_on_link);
            assert!(f64::from(l.outflow) <= l.effective_capacity * 10.0 / 3600.0 + 1.0);
        }
    }
    assert!(s.is_finished());
}

#[test]
fn identical_inputs_give_identical_logs() {
    let d = demand(vec![trips(
        "o",
        "d",
        EndUserType::Driver,
        2000.0,
        0.0,
        600.0,
    )]);
    let run = || {
        let mut s = sim(testutil::diamond(), d.clone(), 10.0);
        s.add_incident(Incident {
            id: "I".into(),
            link: LinkId::new("A2"),
            capacity_factor: 0.5,
            start: 5,
            end: 50,
        })
        .unwrap();
        run_to_end(&mut s, 500);
        s.into_log().to_jsonl()
    };
    assert_eq!(run(), run());
}

#[test]
fn vulnerable_users_walk_without_loading_links() {
    let d = demand(vec![trips("a", "b", EndUserType::VRU, 36.0, 0.0, 100.0)]);
    let mut s = sim(testutil::single_link(1800.0), d, 10.0);
    run_to_end(&mut s, 100);
    // 500 m at 5 km/h is 360 s.
    let arrive: Vec<_> = s.log().of_kind("arrive").collect();
    assert_eq!(arrive.len(), 1);
    assert_eq!(arrive[0].payload["travel_time"], 360.0);
    assert_eq!(s.state().links[0].vehicles_on_link, 0);
    assert!(s.log().of_kind("tick").all(|r| r.payload["queued"] == 0));
}

#[test]
fn unreachable_destination_is_an_error() {
    let d = demand(vec![trips("b", "a", EndUserType::Driver, 10.0, 0.0, 60.0)]);
    let err = Simulation::new(
        Arc::new(testutil::single_link(1800.0)),
        &d,
        &Catalog::empty(),
        SimConfig::default(),
        0,
    )
    .err()
    .unwrap();
    assert!(matches!(err, SimError::Unreachable { .. }));
}

#[test]
fn invalid_inputs_are_rejected() {
    let net = Arc::new(testutil::single_link(1800.0));
    let bad = demand(vec![trips("a", "zz", EndUserType::Driver, 10.0, 0.0, 60.0)]);
    assert!(matches!(
        Simulation::new(
            net.clone(),
            &bad,
            &Catalog::empty(),
            SimConfig::default(),
            0
        ),
        Err(SimError::InvalidDemand(_))
    ));
    let mut s = sim(
        testutil::single_link(1800.0),
        DemandProfile::default(),
        10.0,
    );
    let inc = |f: f64, start, end| Incident {
        id: "I".into(),
        link: LinkId::new("L"),
        capacity_factor: f,
        start,
        end,
    };
    assert!(s.add_incident(inc(1.0, 0, 5)).is_err());
    assert!(s.add_incident(inc(0.5, 5, 5)).is_err());
    assert!(s.add_incident(inc(0.5, 0, 5)).is_ok());
    assert!(s.add_incident(inc(0.5, 0, 5)).is_err());
}

#[test]
fn initial_routes_follow_free_flow_shortest_paths() {
    let d = demand(vec![trips("o", "d", EndUserType::Driver, 10.0, 0.0, 360.0)]);
    let s = sim(testutil::diamond(), d, 10.0);
    let net = s.network().clone();
    let a = &s.agents()[0];
    // The lower branch has two links of equal length, the upper three.
    let route: Vec<&str> = a.route(&net).map(|l| l.as_str()).collect();
    assert_eq!(route, ["E", "B1", "B2", "X"]);
}

#[test]
fn penetration_controls_subscription() {
    let net = Arc::new(testutil::single_link(1800.0));
    let d = demand(vec![trips(
        "a",
        "b",
        EndUserType::Driver,
        3600.0,
        0.0,
        3600.0,
    )]);
    let cat = catalog_with("RWW", &[EndUserType::Driver]);
    let mut cfg = SimConfig::default();
    let full = Simulation::new(net.clone(), &d, &cat, cfg.clone(), 3).unwrap();
    assert!(full
        .agents()
        .iter()
        .all(|a| a.subscribed_services.contains("RWW")));
    cfg.penetration.insert(EndUserType::Driver, 0.25);
    let part = Simulation::new(net, &d, &cat, cfg, 3).unwrap();
    let n = part
        .agents()
        .iter()
        .filter(|a| part.subscribes(a.id, "RWW"))
        .count();
    assert!((800..1000).contains(&n), "{n}");
}

fn rule_source(mediated: bool) -> RuleSource {
    RuleSource {
        service: ServiceId::new("R"),
        message: 7,
        mediated,
    }
}

fn full_compliance() -> SimConfig {
    let mut c = SimConfig::default();
    c.compliance
        .insert(EndUserType::Driver, Compliance::uniform(1.0));
    c
}

fn reroute_upper(mediated: bool) -> (Simulation, ControlParams) {
    let net = Arc::new(testutil::diamond());
    let d = demand(vec![trips(
        "o",
        "d",
        EndUserType::Driver,
        600.0,
        0.0,
        300.0,
    )]);
    let s = Simulation::new(net.clone(), &d, &Catalog::empty(), full_compliance(), 5).unwrap();
    let mut p = ControlParams::neutral(net.links().len());
    let ix = |id: &str| net.link_index(id).unwrap();
    p.reroute.insert(
        net.node_index("c1").unwrap(),
        vec![RerouteRule {
            source: rule_source(mediated),
            avoid: vec![ix("B1"), ix("B2")],
            via: vec![ix("A1"), ix("A2"), ix("A3")],
            mode_shift: 0.0,
        }],
    );
    (s, p)
}

fn links_used(s: &Simulation) -> BTreeSet<String> {
    let net = s.network().clone();
    s.agents()
        .iter()
        .flat_map(|a| a.route(&net).map(|l| l.to_string()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn direct_reroute_reaches_every_passing_agent() {
    let (mut s, p) = reroute_upper(false);
    s.set_control(p);
    run_to_end(&mut s, 500);
    let used = links_used(&s);
    assert!(used.contains("A2") && !used.contains("B1"), "{used:?}");
    assert_eq!(s.log().of_kind("reroute").count(), 50);
}

#[test]
fn mediated_reroute_needs_a_notification() {
    let (mut s, p) = reroute_upper(true);
    s.set_control(p);
    s.notify(AgentId(0), 7);
    run_to_end(&mut s, 500);
    assert_eq!(s.log().of_kind("reroute").count(), 1);
}

#[test]
fn demand_shift_removes_trips_before_departure() {
    let net = Arc::new(testutil::diamond());
    let d = demand(vec![trips(
        "o",
        "d",
        EndUserType::Driver,
        600.0,
        0.0,
        300.0,
    )]);
    let mut s = Simulation::new(net.clone(), &d, &Catalog::empty(), full_compliance(), 5).unwrap();
    let mut p = ControlParams::neutral(net.links().len());
    p.demand_shift.insert(
        net.node_index("c1").unwrap(),
        vec![DemandShiftRule {
            source: rule_source(false),
            share: 1.0,
        }],
    );
    s.set_control(p);
    run_to_end(&mut s, 500);
    let st = s.state();
    assert_eq!(st.mode_shifted, 50);
    assert_eq!(st.created, 0);
    assert!(s.is_finished());
}

#[test]
fn incident_transitions_are_logged() {
    let mut s = sim(
        testutil::single_link(1800.0),
        DemandProfile::default(),
        10.0,
    );
    s.add_incident(Incident {
        id: "I".into(),
        link: LinkId::new("L"),
        capacity_factor: 0.5,
        start: 2,
        end: 4,
    })
    .unwrap();
    for _ in 0..6 {
        s.step();
    }
    let ticks: Vec<(u64, &str)> = s
        .log()
        .records()
        .iter()
        .filter(|r| r.kind.starts_with("incident"))
        .map(|r| (r.tick, r.kind.as_str()))
        .collect();
    assert_eq!(ticks, [(2, "incident_start"), (4, "incident_end")]);
}

#[test]
fn control_factor_scales_capacity() {
    let mut s = sim(
        testutil::single_link(1800.0),
        DemandProfile::default(),
        10.0,
    );
    let mut p = ControlParams::neutral(1);
    p.capacity_factor[0] = 1.3;
    s.set_control(p);
    assert!((s.effective_capacity(0) - 2340.0).abs() < 1e-9);
}

mod detection {
    use super::*;
    use crate::network::{LinkThresholds, RoutePartThreshold};

    fn state_of(net: &RoadNetwork) -> TrafficState {
        TrafficState {
            tick: 1,
            time: 10.0,
            links: net
                .links()
                .iter()
                .map(|l| LinkState {
                    link: l.id.clone(),
                    vehicles_on_link: 0,
                    queue: 0,
                    inflow: 0,
                    outflow: 0,
                    effective_capacity: l.capacity,
                    mean_speed: l.free_flow_speed,
                    density: 0.0,
                    travel_time: l.free_flow_time(),
                })
                .collect(),
            population: 0,
            created: 0,
            on_network: 0,
            completed: 0,
            mode_shifted: 0,
            active_incidents: vec![],
        }
    }

    fn net_with_threshold() -> RoadNetwork {
        let mut d = testutil::doc(
            vec![
                testutil::node("a", crate::network::NodeKind::Choice, 0.0),
                testutil::node("b", crate::network::NodeKind::Regular, 500.0),
                testutil::node("c", crate::network::NodeKind::Choice, 1000.0),
            ],
            vec![
                testutil::edge("L1", "a", "b", 1800.0),
                testutil::edge("L2", "b", "c", 1800.0),
            ],
        );
        d.policy.class_thresholds.insert(
            "default".into(),
            LinkThresholds {
                max_density: 200.0,
                max_queue: 100.0,
                min_speed_ratio: 0.3,
            },
        );
        d.policy.default_route_part_threshold = Some(RoutePartThreshold {
            max_travel_time_ratio: 1.4,
        });
        testutil::build(&d)
    }

    #[test]
    fn quiet_network_has_no_bottlenecks() {
        let net = net_with_threshold();
        assert!(detect_bottlenecks(&state_of(&net), &net).is_empty());
    }

    #[test]
    fn queue_ratio_is_the_severity() {
        let net = net_with_threshold();
        let mut st = state_of(&net);
        st.links[0].queue = 120;
        st.links[0].vehicles_on_link = 120;
        let b = detect_bottlenecks(&st, &net);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].kind, BottleneckKind::QueueSpill);
        assert_eq!(b[0].id, "L1:QueueSpill");
        assert!((b[0].severity - 1.2).abs() < 1e-12);
    }

    #[test]
    fn threshold_itself_is_not_a_problem() {
        let net = net_with_threshold();
        let mut st = state_of(&net);
        st.links[0].queue = 100;
        st.links[1].mean_speed = 0.3 * 50.0;
        assert!(detect_bottlenecks(&st, &net).is_empty());
    }

    #[test]
    fn route_part_travel_time_excess() {
        let net = net_with_threshold();
        let mut st = state_of(&net);
        for l in &mut st.links {
            l.travel_time *= 1.6;
        }
        let b = detect_bottlenecks(&st, &net);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].kind, BottleneckKind::TravelTimeExcess);
        assert_eq!(b[0].element.as_str(), "a>c");
        assert!((b[0].severity - 1.6 / 1.4).abs() < 1e-9);
    }

    #[test]
    fn worst_first_and_incident_cause() {
        let net = net_with_threshold();
        let mut st = state_of(&net);
        st.links[0].queue = 150;
        st.links[1].queue = 300;
        st.links[0].mean_speed = 6.0;
        st.active_incidents.push(Incident {
            id: "I9".into(),
            link: LinkId::new("L2"),
            capacity_factor: 0.5,
            start: 0,
            end: 9,
        });
        let b = detect_bottlenecks(&st, &net);
        let ids: Vec<&str> = b.iter().map(|b| b.id.as_str()).collect();
        assert_eq!(ids, ["L2:QueueSpill", "L1:SpeedDrop", "L1:QueueSpill"]);
        // L2 carries the incident, L1 is immediately upstream of it.
        assert!(b.iter().all(|b| b.primary_cause.as_deref() == Some("I9")));
    }

    #[test]
    fn element_measures_aggregate_members() {
        let net = net_with_threshold();
        let mut st = state_of(&net);
        st.links[0].queue = 3;
        st.links[1].queue = 4;
        assert_eq!(measure_element(&st, &net, "a>c", Measure::Queue), Some(7.0));
        assert_eq!(measure_element(&st, &net, "b", Measure::Queue), Some(3.0));
        assert_eq!(measure_element(&st, &net, "nope", Measure::Queue), None);
        assert_eq!("travel_time_ratio".parse(), Ok(Measure::TravelTimeRatio));
    }
}
