//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! nonzero if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vitac_core::episode::{read_episode_from, write_episode_to};
use vitac_core::frame_codec::*;
use vitac_core::kinematics::{parallel_gripper, tactile_point_cloud, HandModel, JointState, PadGrid};
use vitac_core::pipeline::{track_episode, TrackRecord, TrackSettings};
use vitac_core::pointcloud::*;
use vitac_core::pose_tracker::*;
use vitac_core::sensor_model::*;
use vitac_core::sim::{box_grasp_scene, render_episode, sample_object_cloud, GroundTruth, PoseKey, SceneSpec};
use vitac_core::stream_sync::*;
use vitac_core::PoseSE3;

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn random_points(rng: &mut impl Rng, n: usize, s: f64) -> Vec<[f64; 3]> {
    (0..n).map(|_| [rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)]).collect()
}

fn random_pose(rng: &mut impl Rng) -> PoseSE3 {
    let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    PoseSE3::from_axis_angle(axis, rng.random_range(-3.0..3.0), t)
}

fn sensor_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let a = rng.random_range(10.0..500.0);
        let b = rng.random_range(0.0..300.0);
        let m = TaxelResponseModel::new(a, b).map_err(|e| e.to_string())?;
        check(m.force_to_reading(0.0).unwrap() == 0.0, || "nonzero reading at zero force".into())?;
        let mut prev = 0.0;
        for i in 0..=2000 {
            let r = m.force_to_reading(i as f64 * 0.01).unwrap();
            check(r >= prev, || format!("not monotone at {} N", i as f64 * 0.01))?;
            prev = r;
        }
        let sat = m.force_to_reading(9.0).unwrap();
        for f in [9.0 + 1e-9, 9.5, 12.0, 1e3] {
            check(m.force_to_reading(f).unwrap() == sat, || format!("reading changes above 9 N at {f}"))?;
        }
        let samples: Vec<(f64, f64)> = (0..24).map(|i| {
            let f = 1.0 + 8.0 * i as f64 / 23.0;
            (f, a * f.ln() + b)
        }).collect();
        let fit = fit_response(&samples).map_err(|e| e.to_string())?;
        check((fit.model.a - a).abs() <= 1e-9 * a && (fit.model.b - b).abs() <= 1e-9 * a.max(b), || {
            format!("fit ({}, {}) vs ({a}, {b})", fit.model.a, fit.model.b)
        })?;
    }
    Ok("100 models".into())
}

fn random_frame(rng: &mut impl Rng) -> WireFrame {
    WireFrame {
        pad_id: rng.random(),
        seq: rng.random(),
        timestamp_us: rng.random(),
        readings: (0..256).map(|_| rng.random_range(0..=MAX_READING)).collect(),
    }
}

fn codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<WireFrame> = (0..10_000).map(|_| random_frame(&mut rng)).collect();
    for f in &frames {
        let bytes = encode_wire_frame(f).map_err(|e| e.to_string())?;
        check(decode_frame(&bytes).ok().as_ref() == Some(f), || "round trip mismatch".into())?;
    }
    let mut worst = usize::MAX;
    for _ in 0..1000 {
        let batch: Vec<WireFrame> = (0..10).map(|_| random_frame(&mut rng)).collect();
        let mut bytes: Vec<u8> = batch.iter().flat_map(|f| encode_wire_frame(f).unwrap()).collect();
        let i = rng.random_range(0..bytes.len());
        bytes[i] ^= rng.random_range(1..=255u8);
        let out = StreamDecoder::new().feed(&bytes);
        check(out.iter().all(|f| batch.contains(f)), || "decoder invented a frame".into())?;
        worst = worst.min(out.len());
    }
    check(worst >= 8, || format!("a fuzz trial recovered only {worst} of 10"))?;
    let stream: Vec<u8> = frames[..200].iter().flat_map(|f| encode_wire_frame(f).unwrap()).collect();
    for _ in 0..50 {
        let mut dec = StreamDecoder::new();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < stream.len() {
            let end = (pos + rng.random_range(1..1000)).min(stream.len());
            out.extend(dec.feed(&stream[pos..end]));
            pos = end;
        }
        check(out == frames[..200], || "chunked decode differs".into())?;
    }
    Ok(format!("10000 round trips, worst fuzz recovery {worst}/10, 50 partitions"))
}

fn fps_oracle(points: &[[f64; 4]], k: usize, start: usize) -> Vec<usize> {
    let d2 = |a: &[f64; 4], b: &[f64; 4]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
    let mut selected = vec![start];
    while selected.len() < k.min(points.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if selected.contains(&i) {
                continue;
            }
            let min = selected.iter().map(|&s| d2(p, &points[s])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, b)| min > b) {
                best = Some((i, min));
            }
        }
        selected.push(best.unwrap().0);
    }
    selected
}

fn fps() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..200 {
        let n = rng.random_range(1..=200);
        let k = rng.random_range(1..=50);
        let seed: u64 = rng.random();
        let lattice = trial % 2 == 0;
        let pts: Vec<[f64; 4]> = (0..n)
            .map(|_| if lattice {
                [rng.random_range(0..4) as f64, rng.random_range(0..4) as f64, rng.random_range(0..2) as f64, 0.0]
            } else {
                [rng.random(), rng.random(), rng.random(), 0.0]
            })
            .collect();
        let cloud = CloudXYZF::new("w", pts).unwrap();
        let got = fps_indices(&cloud, k, seed).map_err(|e| e.to_string())?;
        let want = fps_oracle(&cloud.points, k, fps_start_index(n, seed));
        check(got == want, || format!("trial {trial}: indices differ"))?;
    }
    Ok("200 clouds".into())
}

fn chamfer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(1..=200);
        let n = rng.random_range(1..=1000);
        let c = random_points(&mut rng, m, 0.05);
        let o = random_points(&mut rng, n, 0.05);
        let g = weight_distance(&c, &o).map_err(|e| e.to_string())?;
        let oracle: f64 = c
            .iter()
            .map(|p| o.iter().map(|q| (0..3).map(|i| (p[i] - q[i]).powi(2)).sum::<f64>()).fold(f64::INFINITY, f64::min))
            .sum();
        worst = worst.max((g - oracle).abs() / oracle);
    }
    check(worst <= 1e-12, || format!("relative error {worst:e}"))?;
    let c = random_points(&mut rng, 150, 0.05);
    let o = random_points(&mut rng, 700, 0.05);
    let g = weight_distance(&c, &o).unwrap();
    for _ in 0..100 {
        let t = random_pose(&mut rng);
        let c2: Vec<_> = c.iter().map(|p| t.transform_point(*p)).collect();
        let o2: Vec<_> = o.iter().map(|p| t.transform_point(*p)).collect();
        let g2 = weight_distance(&c2, &o2).unwrap();
        check((g2 - g).abs() <= 1e-9 * g, || format!("rigid motion changed g by {:e}", (g2 - g).abs() / g))?;
    }
    Ok(format!("worst relative error {worst:.1e}"))
}

fn particle_filter() -> Outcome {
    for i in 0..1000 {
        let u = i as f64 / 1000.0;
        check(copy_counts(&[0.75, 0.25], 4, u) == vec![3, 1], || format!("3:1 fails at u={u}"))?;
        check(copy_counts(&[0.5, 0.25, 0.125, 0.125], 8, u) == vec![4, 2, 1, 1], || format!("4:2:1:1 fails at u={u}"))?;
        check(copy_counts(&[0.0, 1.0], 16, u) == vec![0, 16], || "point mass".into())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..200);
        let scale = 10f64.powf(rng.random_range(-8.0..2.0));
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..scale)).collect();
        let tau = 10f64.powf(rng.random_range(-7.0..0.0));
        let w = scale_weights(&g, tau).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| g[a].total_cmp(&g[b]));
        check(order.windows(2).all(|p| w[p[0]] >= w[p[1]]), || "weights do not reverse g order".into())?;
    }
    check(worst_sum <= 1e-9, || format!("weight sum off by {worst_sum:e}"))?;
    Ok(format!("max |Σw − 1| = {worst_sum:.1e}"))
}

const SEEDS: u64 = 10;
const UPDATES: f64 = 50.0;
const RATE_HZ: f64 = 10.0;

fn tracking_scene(seed: u64, deg_per_s: f64) -> SceneSpec {
    let mut scene = box_grasp_scene(3e-3, 1e-3, seed);
    scene.noise = 2.0;
    let span = UPDATES / RATE_HZ;
    scene.trajectory = vec![
        PoseKey { t: 0.0, pose: PoseSE3::identity() },
        PoseKey { t: span, pose: PoseSE3::from_axis_angle([0.0, 0.0, 1.0], (deg_per_s * span).to_radians(), [0.0; 3]) },
    ];
    scene
}

fn run_tracking(seed: u64, deg_per_s: f64) -> std::result::Result<(Vec<TrackRecord>, GroundTruth), String> {
    let scene = tracking_scene(seed, deg_per_s);
    let (ep, truth) = render_episode(&scene, RATE_HZ, UPDATES / RATE_HZ).map_err(|e| e.to_string())?;
    let object = ObjectModel::new(sample_object_cloud(&scene.object, 10_000, seed).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let settings = TrackSettings { filter: TrackerConfig::tuned(), prior: PriorBox::default() };
    let records = track_episode(&ep, &scene.gripper.hand(), object, &settings, seed).map_err(|e| e.to_string())?;
    Ok((records, truth))
}

fn pose_tracking() -> Outcome {
    let mut static_pass = 0;
    let mut worst_static = (0.0f64, 0.0f64);
    for seed in 0..SEEDS {
        let (records, truth) = run_tracking(seed, 0.0)?;
        let n = records.len() as f64;
        let rmse = (records.iter().zip(&truth.ticks).map(|(r, t)| r.pose.translation_distance_to(&t.pose).powi(2)).sum::<f64>() / n).sqrt();
        let rot = records.last().unwrap().pose.rotation_angle_to(&truth.ticks.last().unwrap().pose).to_degrees();
        worst_static = (worst_static.0.max(rmse * 1e3), worst_static.1.max(rot));
        if rmse < 5e-3 && rot < 5.0 {
            static_pass += 1;
        }
    }
    let mut moving_pass = 0;
    let mut worst_lag: f64 = 0.0;
    for seed in 0..SEEDS {
        let (records, truth) = run_tracking(100 + seed, 10.0)?;
        let half = records.len() / 2;
        let lag = records[half..]
            .iter()
            .zip(&truth.ticks[half..])
            .map(|(r, t)| r.pose.rotation_angle_to(&t.pose).to_degrees())
            .fold(0.0, f64::max);
        worst_lag = worst_lag.max(lag);
        if lag < 10.0 {
            moving_pass += 1;
        }
    }
    let summary = format!(
        "static {static_pass}/{SEEDS} (worst RMSE {:.2} mm, worst rot {:.2}°), rotating {moving_pass}/{SEEDS} (worst lag {worst_lag:.2}°)",
        worst_static.0, worst_static.1
    );
    if static_pass >= 8 && moving_pass >= 7 { Ok(summary) } else { Err(summary) }
}

fn frames_for(hand: &HandModel, rng: &mut impl Rng) -> Vec<TactileFrame> {
    hand.mounts
        .iter()
        .map(|m| TactileFrame {
            pad_id: m.pad_id,
            timestamp_us: 0,
            readings: TaxelGrid::from_row_major(&(0..256).map(|_| rng.random_range(0.0..=1.0)).collect::<Vec<_>>()).unwrap(),
            normalized: true,
        })
        .collect()
}

fn four_fingers() -> HandModel {
    let a = parallel_gripper(PoseSE3::identity(), PadGrid::default(), [0, 1]);
    let b = parallel_gripper(PoseSE3::identity(), PadGrid::default(), [2, 3]);
    let shift = PoseSE3::from_translation([0.1, 0.0, 0.0]);
    let mut hand = a.clone();
    for mut c in b.chains.clone() {
        c.links[0].fixed = shift.compose(&c.links[0].fixed);
        hand.chains.push(c);
    }
    for mut m in b.mounts.clone() {
        m.chain += 2;
        hand.mounts.push(m);
    }
    hand
}

fn bookkeeping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cams: Vec<CloudXYZF> = (0..3)
        .map(|_| CloudXYZF::new("world", random_points(&mut rng, 3000, 1.0).into_iter().map(|p| [p[0], p[1], p[2], 0.0]).collect()).unwrap())
        .collect();
    let pipeline = VisualPipeline {
        frame: "world".into(),
        crop: Aabb::new([-0.6; 3], [0.6; 3]).unwrap(),
        to_base: PoseSE3::identity(),
        base_frame: "base".into(),
        n_vis: DEFAULT_N_VIS,
    };
    let vis = pipeline.run(&cams, 1).map_err(|e| e.to_string())?;
    check(vis.len() == 512, || format!("N_vis = {}", vis.len()))?;

    let two = parallel_gripper(PoseSE3::identity(), PadGrid::default(), [0, 1]);
    let two_cloud = tactile_point_cloud(&frames_for(&two, &mut rng), &two, &JointState { timestamp_us: 0, positions: vec![0.02; 2] })
        .map_err(|e| e.to_string())?;
    check(two_cloud.len() == 512, || format!("two-finger N_tac = {}", two_cloud.len()))?;
    let four = four_fingers();
    let joints = JointState { timestamp_us: 0, positions: vec![0.02; 4] };
    let frames = frames_for(&four, &mut rng);
    let four_cloud = tactile_point_cloud(&frames, &four, &joints).map_err(|e| e.to_string())?;
    check(four_cloud.len() == 1024, || format!("four-finger N_tac = {}", four_cloud.len()))?;

    let tac = CloudXYZF::new("base", four_cloud.clone()).unwrap();
    let fused = fuse(&vis, &tac).map_err(|e| e.to_string())?;
    check(fused.len() == 512 + 1024, || "fused size".into())?;
    check(fused.points.iter().enumerate().all(|(i, p)| {
        let visual = i < 512;
        p[4] + p[5] == 1.0 && (p[4] == 1.0) == visual
    }), || "one-hot channels do not partition points".into())?;

    for _ in 0..100 {
        let g = random_pose(&mut rng);
        let moved = HandModel { base: g.compose(&four.base), ..four.clone() };
        let pre = tactile_point_cloud(&frames, &moved, &joints).unwrap();
        for (a, b) in four_cloud.iter().zip(&pre) {
            let ga = g.transform_point([a[0], a[1], a[2]]);
            check((0..3).all(|i| (ga[i] - b[i]).abs() < 1e-9) && a[3] == b[3], || "tactile cloud is not equivariant".into())?;
        }
    }
    Ok("N_vis 512, N_tac 512/1024, fused 1536".into())
}

fn sync() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let jitter = |rng: &mut ChaCha8Rng| -> Vec<u64> {
        (0..601u64).map(|k| 1_000_000 + k * 100_000 - 20_000 + rng.random_range(0..=40_000)).collect()
    };
    let mut inputs = SyncInputs::default();
    inputs.tactile.insert(0, jitter(&mut rng).into_iter().map(|t| TactileFrame::raw(0, t, TaxelGrid::filled(1.0))).collect());
    inputs.clouds.insert(0, jitter(&mut rng).into_iter().map(|t| StampedCloud { cam_id: 0, timestamp_us: t, cloud: CloudXYZF::empty("world") }).collect());
    inputs.joints = jitter(&mut rng).into_iter().map(|t| JointState { timestamp_us: t, positions: vec![0.0] }).collect();
    let (tuples, report) = align(&inputs, 10.0, 50_000).map_err(|e| e.to_string())?;
    let skew = tuples.iter().map(SyncedTuple::max_skew_us).max().unwrap_or(0);
    check(report.dropped.is_empty(), || format!("{} drops", report.dropped.len()))?;
    check(skew <= 20_000, || format!("max skew {skew} us"))?;

    let (ep, _) = render_episode(&box_grasp_scene(3e-3, 1e-3, 8), 10.0, 10.0).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    write_episode_to(&mut bytes, &ep).map_err(|e| e.to_string())?;
    let back = read_episode_from(bytes.as_slice()).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    write_episode_to(&mut again, &back).unwrap();
    check(back == ep && again == bytes, || "episode round trip is not exact".into())?;
    Ok(format!("{} tuples, 0 drops, max skew {:.1} ms, {} byte episode", tuples.len(), skew as f64 / 1e3, bytes.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 sensor model fidelity", sensor_model, Duration::from_secs(1)),
        ("2 codec", codec, Duration::from_secs(30)),
        ("3 FPS oracle equivalence", fps, Duration::from_secs(30)),
        ("4 chamfer oracle equivalence", chamfer, Duration::from_secs(30)),
        ("5 particle filter correctness", particle_filter, Duration::from_secs(10)),
        ("6 end-to-end pose tracking", pose_tracking, Duration::from_secs(300)),
        ("7 representation bookkeeping", bookkeeping, Duration::from_secs(10)),
        ("8 sync and episode round trip", sync, Duration::from_secs(10)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget {budget:?}")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!("{} criterion {name}: {detail} [{:.2}s]", if ok { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
