mod common;

use std::collections::BTreeMap;

use common::*;
use prtstl::coordinator::{plan, PlanMode};
use prtstl::encode::AgentPlan;
use prtstl::plot::*;

fn area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

fn inside(p: [f64; 2], hs: &[HalfPlane]) -> bool {
    hs.iter().all(|h| h.a[0] * p[0] + h.a[1] * p[1] + h.b >= -1e-9)
}

fn two_plans() -> BTreeMap<usize, AgentPlan> {
    BTreeMap::from([
        (
            1,
            AgentPlan {
                z: vec![vec![0.0, 0.0], vec![0.5, 0.25], vec![1.0, -0.125]],
                v: vec![vec![0.5, 0.25], vec![0.5, -0.375]],
            },
        ),
        (
            2,
            AgentPlan {
                z: vec![vec![3.0], vec![2.0], vec![1.5]],
                v: vec![vec![-1.0], vec![-0.5]],
            },
        ),
    ])
}

#[test]
fn trajectory_csv_round_trip() {
    let plans = two_plans();
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &plans).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,agent,z0,z1,v0,v1");
    assert_eq!(lines.len(), 1 + 3 + 3);
    assert_eq!(lines[3], "2,1,1,-0.125,,");
    assert_eq!(lines[4], "0,2,3,,-1,");
    assert_eq!(read_trajectory_csv(buf.as_slice()).unwrap(), plans);
}

#[test]
fn trajectory_csv_errors() {
    let bad = "t,agent,z0,v0\n0,1,0,x\n";
    match read_trajectory_csv(bad.as_bytes()) {
        Err(ArtifactError::Format { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(read_trajectory_csv("t,agent,z0,v0\n1,1,0,\n".as_bytes()).is_err());
}

#[test]
fn tube_polygons() {
    let s = scenario("rendezvous.toml");
    let (tubes, _) = prepare(&s);
    let start = tube_polygon(&tubes, 1, 0, &[1.0, 2.0], [0, 1]);
    assert_eq!(start.len(), TUBE_VERTICES);
    assert!(start.iter().all(|p| p == &[1.0, 2.0]));
    let set = &tubes.agent(1)[5];
    let poly = tube_polygon(&tubes, 1, 5, &[0.0, 0.0], [0, 1]);
    for (k, p) in poly.iter().enumerate() {
        // each vertex attains the support in its own direction
        let th = k as f64 * std::f64::consts::TAU / TUBE_VERTICES as f64;
        let a = nalgebra::DVector::from_vec(vec![th.cos(), th.sin()]);
        assert!((a[0] * p[0] + a[1] * p[1] - set.support(&a)).abs() < 1e-9);
    }
    let mut buf = Vec::new();
    write_tube_csv(&mut buf, &tubes, &two_plans_2d(), [0, 1]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("t,agent,vertex,x,y"));
    assert_eq!(text.lines().count(), 1 + 2 * 3 * TUBE_VERTICES);
}

fn two_plans_2d() -> BTreeMap<usize, AgentPlan> {
    let p = |x: f64| AgentPlan {
        z: vec![vec![x, 0.0]; 3],
        v: vec![vec![0.0, 0.0]; 2],
    };
    BTreeMap::from([(1, p(0.0)), (2, p(6.0))])
}

#[test]
fn clipping_areas() {
    let square = rectangle([0.0, 2.0, 0.0, 2.0]);
    assert!((area(&square) - 4.0).abs() < 1e-12);
    // x + y <= 2 keeps half
    let half = clip(&square, HalfPlane { a: [-1.0, -1.0], b: 2.0 });
    assert!((area(&half) - 2.0).abs() < 1e-12);
    // x >= 0.5
    let strip = clip(&square, HalfPlane { a: [1.0, 0.0], b: -0.5 });
    assert!((area(&strip) - 3.0).abs() < 1e-12);
    assert!(clip(&square, HalfPlane { a: [1.0, 0.0], b: -5.0 }).is_empty());
}

#[test]
fn tightened_regions_nest() {
    let s = scenario("desk.toml");
    let (_, spec) = prepare(&s);
    let dims = s.plot.dims;
    let ws = s.plot.workspace.unwrap();
    let orig = collect_regions(&spec.phi.local_tasks[&1], dims);
    let tight = collect_regions(&spec.psi.local_tasks[&1], dims);
    assert_eq!(orig.len(), tight.len());
    let mut kinds = Vec::new();
    for (o, t) in orig.iter().zip(&tight) {
        assert_eq!(o.kind, t.kind);
        let (po, pt) = (o.polygon(ws), t.polygon(ws));
        match o.kind {
            RegionKind::Goal => {
                assert!(pt.iter().all(|p| inside(*p, &o.halfplanes)));
                assert!(area(&pt) < area(&po));
            }
            RegionKind::Obstacle => {
                assert!(po.iter().all(|p| inside(*p, &t.halfplanes)));
                assert!(area(&pt) > area(&po));
            }
        }
        kinds.push(o.kind);
    }
    assert!(kinds.contains(&RegionKind::Goal) && kinds.contains(&RegionKind::Obstacle));
}

#[test]
fn svg_is_deterministic_and_complete() {
    let s = scenario("desk.toml");
    let (tubes, spec) = prepare(&s);
    let r = plan(&s.model, &spec, PlanMode::Iterative, &s.plan).unwrap();
    let scene = || {
        build_scene(
            &s.model,
            &spec.phi.conjunction(),
            &spec.psi.conjunction(),
            &r.plans,
            Some(&tubes),
            s.plot.dims,
            s.plot.workspace,
        )
        .to_svg()
    };
    let svg = scene();
    assert_eq!(svg, scene());
    assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    let n = s.model.horizon();
    assert_eq!(svg.matches("class=\"trajectory\"").count(), 3);
    assert_eq!(svg.matches("class=\"tube\"").count(), 3 * (n + 1));
    assert!(svg.contains("class=\"original goal\""));
    assert!(svg.contains("class=\"tightened obstacle\""));
    assert!(svg.contains("stroke-dasharray"));

    let empty = build_scene(&s.model, &spec.phi.conjunction(), &spec.psi.conjunction(), &BTreeMap::new(), None, [0, 1], None)
        .to_svg();
    assert_eq!(empty.matches("class=\"trajectory\"").count(), 0);
    assert_eq!(empty.matches("class=\"tube\"").count(), 0);
    assert!(empty.contains("class=\"original obstacle\""));
}

#[test]
fn default_workspace_fallbacks() {
    let m = model_with(vec![integrator(1, &[0.0, 0.0], 1.0, 0.01)], &[], &[], 2);
    assert_eq!(default_workspace(&m, &BTreeMap::new(), [0, 1]), [-5.0, 5.0, -5.0, 5.0]);
    let plans = BTreeMap::from([(
        1,
        AgentPlan {
            z: vec![vec![0.0, 0.0], vec![2.0, 1.0], vec![3.0, -1.0]],
            v: vec![vec![0.0, 0.0]; 2],
        },
    )]);
    assert_eq!(default_workspace(&m, &plans, [0, 1]), [-1.0, 4.0, -2.0, 2.0]);
}
