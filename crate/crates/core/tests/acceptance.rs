//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Trains the 64x64 desk model once (several
//! minutes on one core) and reuses it for the streaming, protocol and
//! throughput checks.

use evgest_core::eval::{
    precision_recall, prompt_schedule, run_trial_protocol, Outcome, SimulatedPerformer, TrialConfig, TrialScorer,
};
use evgest_core::events::{decode_events, encode_events, Event, EventStream, SensorGeometry};
use evgest_core::model::{
    decode_checkpoint, encode_checkpoint, gradient_check, loss, train, Architecture, ConvSpec, ForwardOptions,
    GestureModel, GradCheckConfig, ModelConfig, ModelOutput, ModelParams, Network, Target, TrainConfig,
};
use evgest_core::pipeline::{
    batch_detections, bench_pipeline, run_pipeline, DetectionEvent, PipelineConfig, SurfaceClassifier,
};
use evgest_core::representation::{build_time_surface, AggregatorConfig, BoundingBox, TimeSurface};
use evgest_core::simulator::{
    build_dataset, default_specs, generate_events, simulate, DatasetManifest, EsimConfig, GestureClass, ScenarioSpec,
    Scene, Split, DEFAULT_DURATION,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

type Verdict = Result<String, String>;

struct Suite {
    failed: usize,
    /// Substring selecting which checks run; all by default.
    filter: Option<String>,
}

impl Suite {
    fn check(&mut self, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) {
        if self.filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            return;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {took:.1?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {name:<34} {detail} [{took:.1?}]"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {name:<34} {detail} [{took:.1?}]");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- surfaces

fn random_stream(rng: &mut ChaCha8Rng, span: u64) -> EventStream {
    let g = SensorGeometry::new(rng.random_range(1..=12), rng.random_range(1..=12));
    let n = rng.random_range(0..400);
    let mut t: Vec<u64> = (0..n).map(|_| rng.random_range(0..=span)).collect();
    t.sort_unstable();
    // Force timestamp collisions now and then.
    for i in 1..t.len() {
        if rng.random_bool(0.1) {
            t[i] = t[i - 1];
        }
    }
    let events = t
        .into_iter()
        .map(|t| Event::new(rng.random_range(0..g.width), rng.random_range(0..g.height), rng.random_range(0..=1), t))
        .collect();
    EventStream::new(g, events)
}

/// Direct reading of the definition: the newest in-window event per pixel
/// and polarity sets exp(-age / L); untouched cells are 0.
fn surface_oracle(s: &EventStream, t_l: u64, l: u64) -> Vec<f64> {
    let n = s.geometry.pixel_count();
    let mut newest: Vec<Option<u64>> = vec![None; 2 * n];
    for e in &s.events {
        if e.t + l >= t_l && e.t <= t_l {
            let i = e.p as usize * n + e.y as usize * s.geometry.width as usize + e.x as usize;
            newest[i] = Some(newest[i].map_or(e.t, |old: u64| old.max(e.t)));
        }
    }
    newest.iter().map(|t| t.map_or(0.0, |t| (-((t_l - t) as f64) / l as f64).exp())).collect()
}

fn time_surfaces() -> Verdict {
    let g = SensorGeometry::new(3, 1);
    let l = 500_000;
    let t_l = 1_000_000;
    let s = EventStream::new(g, vec![Event::new(2, 0, 1, t_l - l), Event::new(1, 0, 1, t_l - l / 2), Event::new(0, 0, 1, t_l)]);
    let ts = build_time_surface(&s, t_l, l);
    for (x, want) in [(0, 1.0), (1, (-0.5f64).exp()), (2, (-1.0f64).exp())] {
        let got = ts.get(x, 0, 1) as f64;
        ensure((got - want).abs() <= 1e-6, || format!("age case x={x}: {got} vs {want}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cells = 0usize;
    for case in 0..1000 {
        let l = rng.random_range(1..=400_000u64);
        let s = random_stream(&mut rng, 3 * l);
        let t_l = rng.random_range(0..=3 * l);
        let ts = build_time_surface(&s, t_l, l);
        let want = surface_oracle(&s, t_l, l);
        for (i, (&got, &w)) in ts.values.iter().zip(&want).enumerate() {
            ensure((got as f64 - w).abs() <= 1e-6, || format!("stream {case} cell {i}: {got} vs {w}"))?;
        }
        // Each channel only sees its own polarity.
        for p in 0..2u8 {
            let only = EventStream::new(s.geometry, s.events.iter().copied().filter(|e| e.p == p).collect());
            let single = build_time_surface(&only, t_l, l);
            ensure(single.channel(p as usize) == ts.channel(p as usize), || format!("stream {case}: channel {p} leaks"))?;
            ensure(single.channel(1 - p as usize).iter().all(|v| *v == 0.0), || format!("stream {case}: cross-channel write"))?;
        }
        cells += ts.values.len();
    }
    Ok(format!("3 age cases, 1000 streams, {cells} cells vs oracle"))
}

// ---------------------------------------------------------------- simulator

struct Ramp {
    delta: f64,
    duration: f64,
}

impl Scene for Ramp {
    fn geometry(&self) -> SensorGeometry {
        SensorGeometry::new(1, 1)
    }
    fn render_into(&self, t: f64, out: &mut [f64]) {
        out[0] = -0.3 + self.delta * (t / self.duration).min(1.0);
    }
}

fn simulator_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut events = 0;
    let mut worst = 0.0f64;
    let mut case = 0;
    while case < 200 {
        let c: f64 = rng.random_range(0.05..0.6);
        let magnitude: f64 = rng.random_range(0.02..4.0);
        let ratio = magnitude / c;
        // A crossing that lands on the last sample is ambiguous by rounding.
        if (ratio - ratio.round()).abs() < 1e-6 {
            continue;
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let duration = rng.random_range(0.01..1.5);
        let cfg = EsimConfig {
            contrast_threshold_pos: if sign > 0.0 { c } else { rng.random_range(0.05..0.6) },
            contrast_threshold_neg: if sign < 0.0 { c } else { rng.random_range(0.05..0.6) },
            ..EsimConfig::default()
        };
        let s = simulate(&Ramp { delta: sign * magnitude, duration }, &cfg, 0.0, duration, case).map_err(|e| e.to_string())?;
        let expected = ratio.floor() as usize;
        ensure(s.len() == expected, || format!("case {case}: {} events, expected {expected}", s.len()))?;
        let period_us = 1e6 / cfg.sample_rate;
        for (k, e) in s.events.iter().enumerate() {
            ensure(e.p == u8::from(sign > 0.0), || format!("case {case}: polarity {} against slope {sign}", e.p))?;
            let exact = (k + 1) as f64 * c / magnitude * duration * 1e6;
            let err = (e.t as f64 - exact).abs();
            worst = worst.max(err);
            ensure(err <= period_us, || format!("case {case} event {k}: {err:.1} us from the crossing"))?;
        }
        events += s.len();
        case += 1;
    }
    Ok(format!("200 ramps, {events} events, worst timing error {worst:.1} us"))
}

// ---------------------------------------------------------------- model

fn gradients() -> Verdict {
    let config = ModelConfig::tiny();
    let params = Architecture::new(&config).map_err(|e| e.to_string())?.param_count();
    ensure(params <= 5_000, || format!("tiny model has {params} parameters"))?;
    let r = gradient_check(&config, &GradCheckConfig::default()).map_err(|e| e.to_string())?;
    ensure(r.passed(), || format!("{} mismatches, first {:?}", r.mismatches.len(), r.mismatches.first()))?;
    Ok(format!(
        "{params} params x 20 pairs, max abs error {:.1e}, {} kink-refined",
        r.max_abs_error, r.refined
    ))
}

fn random_surface(rng: &mut ChaCha8Rng, g: SensorGeometry) -> TimeSurface {
    let mut s = TimeSurface::zeros(g, 500_000, 500_000);
    let density = rng.random_range(0.0..0.5);
    for v in &mut s.values {
        if rng.random_bool(density) {
            *v = rng.random_range(0.0..=1.0);
        }
    }
    s
}

fn probability_structure() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for (i, config) in [ModelConfig::tiny(), ModelConfig::desk()].iter().enumerate() {
        let net = Network::new(config).map_err(|e| e.to_string())?;
        for k in 0..500 {
            let params = ModelParams::<f32>::init(net.architecture(), rng.random());
            let surface = random_surface(&mut rng, config.geometry);
            let opts = if k % 2 == 0 { ForwardOptions::inference() } else { ForwardOptions::training(rng.random()) };
            let out = net.forward(&params, &surface, &opts).map_err(|e| e.to_string())?;
            let sum: f64 = out.final_probs.iter().map(|&p| p as f64).sum();
            worst = worst.max((sum - 1.0).abs());
            ensure((sum - 1.0).abs() <= 1e-5, || format!("config {i} forward {k}: sum {sum}"))?;
            ensure(out.final_probs[0] == 1.0 - out.p_hand, || format!("config {i} forward {k}: no-hand slot"))?;
            for (j, &g) in out.gesture_probs.iter().enumerate() {
                ensure(out.final_probs[j + 1] == out.p_hand * g, || format!("config {i} forward {k}: slot {}", j + 1))?;
            }
            let masked = loss(&out, &Target { label: GestureClass::NoHand, bbox: Some(BoundingBox::FULL_FRAME) }, 1.0);
            ensure(masked.bbox == 0.0, || format!("config {i} forward {k}: box loss {} on no_hand", masked.bbox))?;
        }
    }
    let uniform = ModelOutput::combine([0.5f64; 4], 6.0 / 7.0, [1.0 / 6.0; 6]);
    for c in GestureClass::ALL {
        let l = loss(&uniform, &Target { label: c, bbox: None }, 1.0).gesture;
        ensure((l - 7f64.ln()).abs() <= 1e-6, || format!("uniform loss {l} for {c}"))?;
    }
    Ok(format!("1000 forwards, worst |sum - 1| {worst:.1e}, uniform loss = ln 7"))
}

// ---------------------------------------------------------------- training

struct Trained {
    model: GestureModel,
    manifest: DatasetManifest,
}

const PER_CLASS: usize = 150;

fn desk_training(dir: &Path, slot: &mut Option<Trained>) -> Verdict {
    let g = SensorGeometry::new(64, 64);
    let specs = default_specs(&GestureClass::ALL, PER_CLASS, 1, g, DEFAULT_DURATION);
    let esim = EsimConfig::default();
    let data = dir.join("desk");
    let manifest = build_dataset(&specs, &esim, 0.9, &data).map_err(|e| e.to_string())?;
    let (n_train, n_val) = (manifest.count(Split::Train), manifest.count(Split::Val));

    // Regenerating part of the dataset reproduces it byte for byte.
    let again = build_dataset(&specs[..21], &esim, 0.9, &dir.join("again")).map_err(|e| e.to_string())?;
    for e in &again.entries {
        let a = std::fs::read(dir.join("again").join(&e.path)).map_err(|e| e.to_string())?;
        let b = std::fs::read(data.join(&e.path)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{} differs on regeneration", e.path.display()))?;
    }

    let model_config = ModelConfig::desk();
    let config = TrainConfig { seed: 1, ..TrainConfig::desk() };
    let agg = AggregatorConfig::default();
    let start = Instant::now();
    let outcome = train(&manifest, &model_config, &config, &agg, |m| {
        eprintln!("  epoch {:>2}  loss {:.4}  val acc {:.3}  {:.0?}", m.epoch + 1, m.train_loss, m.val_accuracy, start.elapsed());
    })
    .map_err(|e| e.to_string())?;
    let best = outcome.history[outcome.best_epoch].val_accuracy;

    // Same seed, same first epochs.
    let short = TrainConfig { epochs: 2, hold_epochs: 1, ..config.clone() };
    let rerun = train(&manifest, &model_config, &short, &agg, |_| {}).map_err(|e| e.to_string())?;
    for (a, b) in rerun.history.iter().zip(&outcome.history) {
        ensure(a == b, || format!("epoch {} differs on rerun: {a:?} vs {b:?}", a.epoch + 1))?;
    }

    let model = GestureModel::new(&model_config, outcome.params).map_err(|e| e.to_string())?;
    *slot = Some(Trained { model, manifest });
    ensure(best >= 0.85, || format!("validation accuracy {best:.3} < 0.85"))?;
    Ok(format!(
        "{n_train}/{n_val} train/val samples, {} epochs, val accuracy {best:.3} (epoch {}), reruns identical",
        config.epochs,
        outcome.best_epoch + 1
    ))
}

fn needs_model(t: &Option<Trained>) -> Result<&Trained, String> {
    t.as_ref().ok_or_else(|| "no trained model".to_string())
}

fn equivalence(t: &Trained) -> Verdict {
    let classifier: Arc<dyn SurfaceClassifier> = Arc::new(t.model.clone());
    let config = PipelineConfig::default();
    let mut detections = 0;
    let key = |d: &DetectionEvent| (d.gesture, d.t_us, d.probability.to_bits());
    let mut samples: Vec<EventStream> = t.manifest.split(Split::Val).step_by(5).take(14).map(|e| t.manifest.read_stream(e).unwrap()).collect();
    // Longer streams holding several gestures back to back.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..6 {
        let mut events = Vec::new();
        let mut offset = 0;
        for _ in 0..4 {
            let c = GestureClass::ALL[rng.random_range(0..7)];
            let spec = ScenarioSpec::sample(c, t.model.geometry(), rng.random(), DEFAULT_DURATION);
            let s = generate_events(&spec, &EsimConfig::default()).map_err(|e| e.to_string())?;
            events.extend(s.shifted(offset).events);
            offset += rng.random_range(500_000..1_500_000);
        }
        samples.push(EventStream::new(t.model.geometry(), events));
    }
    for (i, s) in samples.iter().enumerate() {
        let online = run_pipeline(classifier.clone(), s, &config).map_err(|e| e.to_string())?;
        let offline = batch_detections(classifier.as_ref(), s, &config).map_err(|e| e.to_string())?;
        let a: Vec<_> = online.detections.iter().map(key).collect();
        let b: Vec<_> = offline.iter().map(key).collect();
        ensure(a == b, || format!("stream {i}: online {a:?} vs offline {b:?}"))?;
        detections += a.len();
    }
    ensure(detections > 0, || "no detections to compare".into())?;
    Ok(format!("{} streams, {detections} identical detections", samples.len()))
}

fn protocol(t: &Trained) -> Verdict {
    use GestureClass::{SwipeLeft, SwipeRight};
    // Micro-case scored from raw detections: sl 8 hits + 2 silent prompts;
    // sr 9 hits + 1 answered with sl.
    let cfg = TrialConfig { gestures: vec![SwipeLeft, SwipeRight], repetitions: 10, ..TrialConfig::default() };
    let mut scorer = TrialScorer::new(prompt_schedule(&cfg));
    let (mut sl_seen, mut sr_seen) = (0, 0);
    for p in scorer.schedule().to_vec() {
        let fire = |g| DetectionEvent { gesture: g, probability: 0.9, t_us: p.window_start_us + 300_000, latency_us: 0, compute_us: 0 };
        let d = match p.gesture {
            SwipeLeft => {
                sl_seen += 1;
                (sl_seen <= 8).then(|| fire(SwipeLeft))
            }
            _ => {
                sr_seen += 1;
                Some(fire(if sr_seen <= 9 { SwipeRight } else { SwipeLeft }))
            }
        };
        if let Some(d) = d {
            scorer.observe(&d);
        }
    }
    let s = scorer.summary();
    let sl = s.per_gesture[&SwipeLeft];
    ensure(sl.recall.value == Some(0.8), || format!("recall(sl) {:?}", sl.recall.value))?;
    ensure(sl.precision.value == Some(8.0 / 9.0), || format!("precision(sl) {:?}", sl.precision.value))?;
    ensure(s == precision_recall(&scorer.records(), scorer.spurious()), || "summary mismatch".into())?;

    let classifier: Arc<dyn SurfaceClassifier> = Arc::new(t.model.clone());
    let mut worst = 1.0f64;
    let mut spurious = 0;
    for seed in 0..3 {
        let cfg = TrialConfig { seed, ..TrialConfig::default() };
        let run = |perf_seed| {
            let mut performer = SimulatedPerformer::new(t.model.geometry(), perf_seed);
            run_trial_protocol(classifier.clone(), &PipelineConfig::default(), &mut performer, &cfg)
        };
        let report = run(seed).map_err(|e| e.to_string())?;
        let again = run(seed).map_err(|e| e.to_string())?;
        ensure(report.records == again.records, || format!("seed {seed}: records differ between runs"))?;
        for (g, pr) in &report.summary.per_gesture {
            let r = pr.recall.value.unwrap_or(0.0);
            worst = worst.min(r);
            ensure(r >= 0.8, || {
                let misses: Vec<_> = report.records.iter().filter(|x| x.prompt.gesture == *g && !matches!(x.outcome, Outcome::Hit { .. })).map(|x| x.outcome).collect();
                format!("seed {seed}: recall({g}) = {r:.2}; misses {misses:?}")
            })?;
        }
        spurious += report.summary.spurious.values().sum::<u64>();
    }
    Ok(format!("micro-case 0.800 / 0.889; self-play 3 seeds x 30 prompts, min recall {worst:.2}, {spurious} gap detections"))
}

fn throughput(t: &Trained) -> Verdict {
    let g = t.model.geometry();
    let mut events = Vec::new();
    for (i, c) in GestureClass::ALL.iter().enumerate() {
        let spec = ScenarioSpec::sample(*c, g, 900 + i as u64, DEFAULT_DURATION);
        let s = generate_events(&spec, &EsimConfig::default()).map_err(|e| e.to_string())?;
        events.extend(s.shifted(i as u64 * 1_000_000).events);
    }
    let stream = EventStream::new(g, events);
    let r = bench_pipeline(Arc::new(t.model.clone()), &stream, &PipelineConfig::default(), 10).map_err(|e| e.to_string())?;
    ensure(r.real_time_factor > 1.0, || format!("real-time factor {:.2}", r.real_time_factor))?;
    Ok(format!(
        "{} strides: compute mean {:.0} us, p95 {:.0} us; latency p95 {:.0} us; RTF {:.0}",
        r.compute_us.count, r.compute_us.mean, r.compute_us.p95, r.latency_us.p95, r.real_time_factor
    ))
}

fn swipe_left_example(t: &Trained) -> Verdict {
    let classifier: Arc<dyn SurfaceClassifier> = Arc::new(t.model.clone());
    let mut counts = 0;
    for seed in [31, 32, 33] {
        let spec = ScenarioSpec::sample(GestureClass::SwipeLeft, t.model.geometry(), 7_000_000 + seed, DEFAULT_DURATION);
        let s = generate_events(&spec, &EsimConfig::default()).map_err(|e| e.to_string())?;
        let run = run_pipeline(classifier.clone(), &s, &PipelineConfig::default()).map_err(|e| e.to_string())?;
        let d = &run.detections;
        ensure(d.iter().any(|d| d.gesture == GestureClass::SwipeLeft), || format!("seed {seed}: no swipe_left in {d:?}"))?;
        ensure(d.iter().all(|d| d.gesture == GestureClass::SwipeLeft), || format!("seed {seed}: other classes in {d:?}"))?;
        ensure(d.windows(2).all(|w| w[1].t_us - w[0].t_us >= 500_000), || format!("seed {seed}: refractory broken {d:?}"))?;
        counts += d.len();
    }
    Ok(format!("3 fresh swipe_left samples, {counts} detections, all swipe_left"))
}

// ---------------------------------------------------------------- codecs

/// A random small architecture that builds.
fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    loop {
        let c = random_config_candidate(rng);
        if Network::new(&c).is_ok() {
            return c;
        }
    }
}

fn random_config_candidate(rng: &mut ChaCha8Rng) -> ModelConfig {
    let conv = |rng: &mut ChaCha8Rng| ConvSpec::new(rng.random_range(1..5), [1, 3, 5][rng.random_range(0..3)], rng.random_range(1..3));
    let n1 = rng.random_range(1..3);
    let n2 = rng.random_range(1..3);
    ModelConfig {
        geometry: SensorGeometry::new(rng.random_range(4..20), rng.random_range(4..20)),
        crop_size: rng.random_range(3..10),
        stage1_convs: (0..n1).map(|_| conv(rng)).collect(),
        stage1_dense: vec![rng.random_range(1..10)],
        stage2_convs: (0..n2).map(|_| conv(rng)).collect(),
        stage2_dense: vec![rng.random_range(1..10)],
        dropout: rng.random_range(0.0..0.9),
        ..ModelConfig::tiny()
    }
}

fn same_bits(a: &ModelParams<f32>, b: &ModelParams<f32>) -> bool {
    a.names().eq(b.names())
        && a.iter().zip(b.iter()).all(|((_, x), (_, y))| {
            x.shape() == y.shape() && x.data().iter().map(|v| v.to_bits()).eq(y.data().iter().map(|v| v.to_bits()))
        })
}

fn mutate(rng: &mut ChaCha8Rng, valid: &[u8]) -> Vec<u8> {
    let mut b = valid.to_vec();
    match rng.random_range(0..4) {
        0 => b.truncate(rng.random_range(0..=b.len())),
        1 => {
            for _ in 0..rng.random_range(1..8) {
                if !b.is_empty() {
                    let i = rng.random_range(0..b.len());
                    b[i] = rng.random();
                }
            }
        }
        2 => b.extend((0..rng.random_range(1..40)).map(|_| rng.random::<u8>())),
        _ => b = (0..rng.random_range(0..200)).map(|_| rng.random()).collect(),
    }
    b
}

fn codecs() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut hev1 = Vec::new();
    let mut hck1 = Vec::new();
    for i in 0..100 {
        let span = rng.random_range(0..u64::MAX / 2);
        let s = random_stream(&mut rng, span);
        let bytes = encode_events(&s).map_err(|e| e.to_string())?;
        let back = decode_events(&bytes).map_err(|e| format!("stream {i}: {e}"))?;
        ensure(back == s, || format!("stream {i} changed"))?;
        ensure(encode_events(&back).unwrap() == bytes, || format!("stream {i} re-encodes differently"))?;
        hev1.push(bytes);

        let config = random_config(&mut rng);
        let net = Network::new(&config).map_err(|e| format!("config {i}: {e}"))?;
        let mut params = ModelParams::<f32>::init(net.architecture(), rng.random());
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                if rng.random_bool(0.05) {
                    *v = f32::from_bits(rng.random());
                }
            }
        }
        let bytes = encode_checkpoint(&params, &config);
        let (p, c) = decode_checkpoint(&bytes).map_err(|e| format!("checkpoint {i}: {e}"))?;
        ensure(c == config && same_bits(&p, &params), || format!("checkpoint {i} changed"))?;
        ensure(encode_checkpoint(&p, &c) == bytes, || format!("checkpoint {i} re-encodes differently"))?;
        hck1.push(bytes);
    }

    let mut rejected = 0;
    let fuzz = 20_000;
    for i in 0..fuzz {
        let ev = mutate(&mut rng, &hev1[i % hev1.len()]);
        let ck = mutate(&mut rng, &hck1[i % hck1.len()]);
        let ok_ev = catch_unwind(|| decode_events(&ev).is_err()).map_err(|_| format!("HEV1 decoder panicked on input {i}"))?;
        let ok_ck = catch_unwind(|| decode_checkpoint(&ck).is_err()).map_err(|_| format!("HCK1 decoder panicked on input {i}"))?;
        rejected += usize::from(ok_ev) + usize::from(ok_ck);
    }
    Ok(format!("100 HEV1 + 100 HCK1 bit-exact; {} fuzzed inputs, {rejected} rejected, 0 panics", 2 * fuzz))
}

fn main() {
    // Decoder panics are reported by the suite, not printed.
    std::panic::set_hook(Box::new(|_| {}));
    let dir = tempfile::tempdir().expect("temp dir");
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut suite = Suite { failed: 0, filter };
    let mut trained = None;

    suite.check("time surface values", Some(Duration::from_secs(10)), time_surfaces);
    suite.check("simulator ramp oracle", Some(Duration::from_secs(30)), simulator_oracle);
    suite.check("gradient check", Some(Duration::from_secs(120)), gradients);
    suite.check("probability structure", None, probability_structure);
    suite.check("desk-scale training", Some(Duration::from_secs(30 * 60)), || desk_training(dir.path(), &mut trained));
    suite.check("online/offline equivalence", None, || equivalence(needs_model(&trained)?));
    suite.check("trial protocol", None, || protocol(needs_model(&trained)?));
    suite.check("throughput", None, || throughput(needs_model(&trained)?));
    suite.check("codec and checkpoint round-trips", None, codecs);
    suite.check("swipe_left pipeline example", None, || swipe_left_example(needs_model(&trained)?));

    if suite.failed > 0 {
        println!("{} check(s) failed", suite.failed);
        std::process::exit(1);
    }
}
