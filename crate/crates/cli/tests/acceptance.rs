//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criteria 6 to 10 run the whole workflow (phantoms, both networks, CRF
//! search, segmentation, evaluation) twice in temporary directories.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use cfcn::commands::{self, SegmentInput, SegmentOptions, SegmentedCase};
use cfcn::config::{ExperimentConfig, Role};
use cfcn::manifest::Dataset;
use cfcn_core::cascade::{LESION, LIVER};
use cfcn_core::densecrf::{brute_force_map, energy, mean_field, CrfParams, UnaryField};
use cfcn_core::metrics::{score_masks, BinaryMask, MetricSummary};
use cfcn_core::minifcn::{self, class_weights, loss, MiniFcn, NetConfig, TrainConfig, TrainingCurve};
use cfcn_core::phantom::{generate_with_layout, PhantomSpec, Split};
use cfcn_core::seed::stream_rng;
use cfcn_core::volgrid::{Grid, LabelVolume, Plane, Volume};
use rand::Rng;
use sha2::{Digest, Sha256};

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn outcome(id: &'static str, title: &'static str, start: Instant, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        title,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn report(o: &Outcome) {
    println!(
        "[{}] {:>2} {}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.title,
        o.detail,
        o.seconds
    );
}

// ---------------------------------------------------------------- metrics

type Voxel = [usize; 3];

struct MaskPair {
    shape: [usize; 3],
    spacing: [f64; 3],
    truth: BTreeSet<Voxel>,
    pred: BTreeSet<Voxel>,
}

fn random_set<R: Rng>(rng: &mut R, shape: [usize; 3]) -> BTreeSet<Voxel> {
    let mut s = BTreeSet::new();
    // union of a few random boxes plus scattered voxels
    for _ in 0..rng.random_range(1..4) {
        let lo = shape.map(|n| rng.random_range(0..n));
        let hi = [0, 1, 2].map(|a| rng.random_range(lo[a]..shape[a]));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    s.insert([x, y, z]);
                }
            }
        }
    }
    for _ in 0..rng.random_range(0..6) {
        s.insert(shape.map(|n| rng.random_range(0..n)));
    }
    s
}

fn mask_pairs() -> Vec<MaskPair> {
    let mut rng = stream_rng(2024, 0);
    (0..50)
        .map(|_| {
            let shape = [0; 3].map(|_| rng.random_range(2..=16));
            let spacing = [0; 3].map(|_| rng.random_range(0.5..2.5));
            MaskPair {
                shape,
                spacing,
                truth: random_set(&mut rng, shape),
                pred: random_set(&mut rng, shape),
            }
        })
        .collect()
}

fn to_mask(shape: [usize; 3], spacing: [f64; 3], s: &BTreeSet<Voxel>) -> BinaryMask {
    let g = Grid::new(shape, spacing).unwrap();
    let mut m = vec![false; g.len()];
    for &[x, y, z] in s {
        m[x + shape[0] * (y + shape[1] * z)] = true;
    }
    BinaryMask::new(g, m).unwrap()
}

/// Mask voxels with a 6-neighbour outside the mask or outside the grid.
fn surface(shape: [usize; 3], s: &BTreeSet<Voxel>) -> Vec<Voxel> {
    s.iter()
        .copied()
        .filter(|&v| {
            (0..3).any(|a| {
                [-1i64, 1].iter().any(|&d| {
                    let c = v[a] as i64 + d;
                    if c < 0 || c >= shape[a] as i64 {
                        return true;
                    }
                    let mut n = v;
                    n[a] = c as usize;
                    !s.contains(&n)
                })
            })
        })
        .collect()
}

fn directed(from: &[Voxel], to: &[Voxel], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| ((p[a] as f64 - q[a] as f64) * spacing[a]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn criteria_1_2() -> (Outcome, Outcome) {
    let start = Instant::now();
    let (mut set_err, mut dist_err, mut ident_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut surfaces = 0;
    for p in mask_pairs() {
        let row = score_masks(
            1,
            &to_mask(p.shape, p.spacing, &p.truth),
            &to_mask(p.shape, p.spacing, &p.pred),
        )
        .unwrap();
        let inter = p.truth.intersection(&p.pred).count() as f64;
        let union = p.truth.union(&p.pred).count() as f64;
        let (a, b) = (p.truth.len() as f64, p.pred.len() as f64);
        let dice = 2.0 * inter / (a + b);
        let voe = 100.0 * (1.0 - inter / union);
        let rvd = 100.0 * (b - a) / a;
        set_err = set_err
            .max((row.dice - dice).abs())
            .max((row.voe_pct - voe).abs())
            .max((row.rvd_pct.unwrap() - rvd).abs());

        let (st, sp) = (surface(p.shape, &p.truth), surface(p.shape, &p.pred));
        let (dt, dp) = (directed(&st, &sp, p.spacing), directed(&sp, &st, p.spacing));
        let asd = (dt.iter().sum::<f64>() + dp.iter().sum::<f64>()) / (dt.len() + dp.len()) as f64;
        let msd = dt.iter().chain(&dp).fold(0.0f64, |m, &x| m.max(x));
        dist_err = dist_err
            .max((row.asd_mm.unwrap() - asd).abs())
            .max((row.msd_mm.unwrap() - msd).abs());
        surfaces += st.len() + sp.len();

        ident_err = ident_err.max((row.voe_pct - 100.0 * (1.0 - row.dice / (2.0 - row.dice))).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let c1 = outcome(
        "1",
        "metric oracle suite",
        start,
        set_err <= 1e-12 && dist_err <= 1e-9 && secs < 30.0,
        format!(
            "50 pairs, {surfaces} surface voxels; max |dice/voe/rvd - set arithmetic| = {set_err:.2e} (tol 1e-12), \
             max |asd/msd - brute force| = {dist_err:.2e} (tol 1e-9), runtime < 30 s"
        ),
    );
    let c2 = outcome(
        "2",
        "VOE/Dice identity",
        start,
        ident_err <= 1e-12,
        format!("max |voe - 100(1 - dice/(2 - dice))| = {ident_err:.2e} (tol 1e-12)"),
    );
    (c1, c2)
}

// --------------------------------------------------------------- gradient

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}

fn gradient_error(weights: &[f64], seed: u64) -> f64 {
    let cfg = NetConfig {
        depth: 1,
        base_channels: 4,
        ..NetConfig::default()
    };
    let mut rng = stream_rng(seed, 0);
    let mut net = MiniFcn::<f64>::new(cfg, &mut rng).unwrap();
    // move biases off zero so no unit sits on a ReLU kink
    let theta: Vec<f64> = net.flat_params().iter().map(|&t| t + rng.random_range(-0.05..0.05)).collect();
    net.set_flat_params(&theta);
    let image = Plane::new(8, 8, (0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let truth = Plane::new(8, 8, (0..64).map(|i| u8::from((2..5).contains(&(i % 8)) && (3..6).contains(&(i / 8)))).collect()).unwrap();
    let analytic = net.loss_and_grad(&image, &truth, weights).unwrap().1.flat();
    let h = 1e-5;
    let mut probe = net.clone();
    let mut t = theta.clone();
    let numeric: Vec<f64> = (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + h;
            probe.set_flat_params(&t);
            let lp = probe.loss_and_grad(&image, &truth, weights).unwrap().0;
            t[i] = theta[i] - h;
            probe.set_flat_params(&t);
            let lm = probe.loss_and_grad(&image, &truth, weights).unwrap().0;
            t[i] = theta[i];
            (lp - lm) / (2.0 * h)
        })
        .collect();
    rel_err(&analytic, &numeric)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let unbalanced = gradient_error(&[1.0; 64], 31);
    let truth: Vec<u8> = (0..64).map(|i| u8::from((2..5).contains(&(i % 8)) && (3..6).contains(&(i / 8)))).collect();
    let w = class_weights::<f64>(&truth).unwrap();
    let balanced = gradient_error(&w, 32);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "3",
        "gradient check",
        start,
        unbalanced < 1e-4 && balanced < 1e-4 && secs < 60.0,
        format!("depth-1 net, 8x8 input, relative error unbalanced {unbalanced:.2e}, balanced {balanced:.2e} (tol 1e-4)"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let l = loss::<f64>(&[0.5, 0.5], &[1, 0], &[1.0, 1.0]).unwrap();
    let err = (l - std::f64::consts::LN_2).abs();
    outcome(
        "4",
        "loss worked value",
        start,
        err <= 1e-12,
        format!("L = {l:.15}, |L - ln 2| = {err:.2e} (tol 1e-12)"),
    )
}

// -------------------------------------------------------------------- CRF

fn kernel(g: &Grid, v: &[f32], i: usize, j: usize, p: &CrfParams) -> f64 {
    let (a, b) = (g.coords(i), g.coords(j));
    let d2: f64 = (0..3).map(|k| ((a[k] as f64 - b[k] as f64) * g.spacing[k]).powi(2)).sum();
    let di = f64::from(v[i]) - f64::from(v[j]);
    p.w_pos * (-d2 / (2.0 * p.sigma_pos.powi(2))).exp()
        + p.w_bil * (-d2 / (2.0 * p.sigma_bil.powi(2)) - di * di / (2.0 * p.sigma_int.powi(2))).exp()
}

fn unary_dominant(seed: u64) -> (UnaryField, Volume, CrfParams) {
    let mut rng = stream_rng(seed, 7);
    let g = Grid::new([3, 3, 3], [1.0; 3]).unwrap();
    let v: Vec<f32> = (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let p = CrfParams {
        w_pos: rng.random_range(0.1..2.0),
        w_bil: rng.random_range(0.1..2.0),
        sigma_pos: rng.random_range(0.5..2.0),
        sigma_bil: rng.random_range(0.5..3.0),
        sigma_int: rng.random_range(0.05..0.5),
        iterations: 5,
    };
    let phi = (0..g.len())
        .flat_map(|i| {
            let mass: f64 = (0..g.len()).filter(|&j| j != i).map(|j| kernel(&g, &v, i, j, &p)).sum();
            let gap = 10.0 * mass * rng.random_range(1.0..2.0);
            let base = rng.random_range(0.0..1.0);
            if rng.random_bool(0.5) {
                [base, base + gap]
            } else {
                [base + gap, base]
            }
        })
        .collect();
    (UnaryField::new(g, 2, phi).unwrap(), Volume::new(g, v).unwrap(), p)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let agree = (0..30)
        .filter(|&s| {
            let (u, v, p) = unary_dominant(s);
            mean_field(&u, &v, &p).unwrap().1 == brute_force_map(&u, &v, &p).unwrap()
        })
        .count();

    let g = Grid::new([2, 1, 1], [1.0; 3]).unwrap();
    let u = UnaryField::new(g, 2, vec![0.1, 2.0, 1.5, 0.2]).unwrap();
    let v = Volume::filled(g, 0.0);
    let p = CrfParams {
        w_pos: 1.0,
        w_bil: 0.0,
        sigma_pos: 1.0,
        ..CrfParams::default()
    };
    let k = (-0.5f64).exp();
    let expected = [((0, 0), 1.6), ((0, 1), 0.3 + k), ((1, 0), 3.5 + k), ((1, 1), 2.2)];
    let table_err = expected
        .iter()
        .map(|&((a, b), e)| (energy(&LabelVolume::new(g, vec![a, b]).unwrap(), &u, &v, &p).unwrap() - e).abs())
        .fold(0.0f64, f64::max);

    let mut rng = stream_rng(99, 0);
    let degenerate = (0..10).all(|_| {
        let g = Grid::new([5, 4, 3], [1.0, 1.0, 2.0]).unwrap();
        let nl = rng.random_range(2..4);
        let phi: Vec<f64> = (0..g.len() * nl).map(|_| rng.random_range(0.0..3.0)).collect();
        let argmin: Vec<u8> = phi
            .chunks(nl)
            .map(|c| (0..nl).fold(0, |b, l| if c[l] < c[b] { l } else { b }) as u8)
            .collect();
        let u = UnaryField::new(g, nl, phi).unwrap();
        let v = Volume::new(g, (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let p = CrfParams {
            w_pos: 0.0,
            w_bil: 0.0,
            ..CrfParams::default()
        };
        mean_field(&u, &v, &p).unwrap().1.labels() == argmin.as_slice()
    });
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "5",
        "CRF oracle equality",
        start,
        agree == 30 && table_err <= 1e-9 && degenerate && secs < 60.0,
        format!(
            "mean field = brute force MAP on {agree}/30 unary-dominant 3x3x3 instances; \
             two-voxel energy table max error {table_err:.2e} (tol 1e-9, E(0,1) = {:.5}); zero pairwise = unary argmax: {degenerate}",
            0.3 + k
        ),
    )
}

// --------------------------------------------------------------- workflow

fn acceptance_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        seed: 20170125,
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn peak(curve: &TrainingCurve) -> f64 {
    curve.records.iter().filter_map(|r| r.test_dice).fold(0.0, f64::max)
}

fn last(curve: &TrainingCurve) -> f64 {
    curve.last().and_then(|r| r.test_dice).unwrap_or(0.0)
}

struct Workflow {
    liver_dice: f64,
    liver_secs: f64,
    balanced: TrainingCurve,
    unbalanced: TrainingCurve,
    lesion_fraction: f64,
    ablation_secs: f64,
    segmented: Vec<SegmentedCase>,
    segment_secs: f64,
    cascade: Vec<MetricSummary>,
    refined: Vec<MetricSummary>,
    single: Vec<MetricSummary>,
    suppressed: usize,
    single_hits: usize,
    distractors: usize,
    hashes: BTreeMap<String, String>,
}

fn lesion_fraction(ds: &Dataset) -> Result<f64> {
    let (mut lesion, mut total) = (0, 0);
    for c in ds.cases(None) {
        let (_, l) = ds.load_case(c)?;
        lesion += l.count(LESION);
        total += l.labels().len();
    }
    Ok(lesion as f64 / total as f64)
}

/// Distractors the single network labels lesion (at least half the ball)
/// and how many of those the cascade leaves entirely background.
fn distractor_counts(ds: &Dataset, segmented: &[SegmentedCase]) -> Result<(usize, usize, usize)> {
    let (mut total, mut single_hits, mut suppressed) = (0, 0, 0);
    for s in segmented {
        let c = ds.manifest.cases.iter().find(|c| c.id == s.id).unwrap();
        let spec = PhantomSpec {
            seed: c.seed,
            ..ds.manifest.phantom.clone()
        };
        let (_, _, layout) = generate_with_layout(&spec)?;
        let g = *s.cascade.labels.grid();
        let single = s.single.as_ref().unwrap().labels();
        for &(centre, r) in &layout.distractors {
            total += 1;
            let voxels: Vec<usize> = (0..g.len())
                .filter(|&i| {
                    let p = g.coords(i);
                    (0..3).map(|a| (p[a] as f64 - centre[a]).powi(2)).sum::<f64>() <= r * r
                })
                .collect();
            let hit = voxels.iter().filter(|&&i| single[i] == LESION).count();
            if voxels.is_empty() || 2 * hit < voxels.len() {
                continue;
            }
            single_hits += 1;
            if voxels.iter().all(|&i| s.cascade.labels.labels()[i] == 0) {
                suppressed += 1;
            }
        }
    }
    Ok((total, single_hits, suppressed))
}

fn hash_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for e in walkdir::WalkDir::new(root).sort_by_file_name() {
        let e = e?;
        if !e.file_type().is_file() {
            continue;
        }
        let digest = Sha256::digest(fs::read(e.path())?);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        map.insert(e.path().strip_prefix(root)?.to_string_lossy().into_owned(), hex);
    }
    Ok(map)
}

fn workflow(out: &Path) -> Result<Workflow> {
    let cfg = acceptance_config(out);
    let ds = commands::phantom(&cfg)?;
    let lesion_fraction = lesion_fraction(&ds)?;

    let t = Instant::now();
    let liver_curve = commands::train(&cfg, Role::Liver)?;
    let liver_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let balanced = commands::train(&cfg, Role::Lesion)?;
    let (train_set, test_set) = commands::training_samples(&cfg, Role::Lesion)?;
    let tc = TrainConfig {
        class_balancing: false,
        ..cfg.train_config(Role::Lesion)
    };
    let (_, unbalanced) = minifcn::train(cfg.net_config(Role::Lesion), &tc, &train_set, &test_set)?;
    unbalanced.save_csv(&out.join("models").join("lesion_unbalanced_curve.csv"))?;
    let ablation_secs = t.elapsed().as_secs_f64();

    commands::crf_search(&cfg)?;
    let t = Instant::now();
    let segmented = commands::segment(
        &cfg,
        &SegmentOptions {
            input: SegmentInput::TestSplit,
            crf: true,
            crf_params: Some(cfg.crf_params_path()),
            baseline: true,
            overlays: true,
        },
    )?;
    let segment_secs = t.elapsed().as_secs_f64();

    let truth = commands::reference_dir(&cfg)?;
    let cases = commands::split_cases(&cfg, Split::Test)?;
    let seg = cfg.segment_dir();
    let cascade = commands::evaluate(&cfg, &seg.join("labels"), &truth, Some(cases.clone()))?.summaries;
    let refined = commands::evaluate(&cfg, &seg.join("labels_crf"), &truth, Some(cases.clone()))?.summaries;
    let single = commands::evaluate(&cfg, &seg.join("labels_single"), &truth, Some(cases))?.summaries;
    let (distractors, single_hits, suppressed) = distractor_counts(&ds, &segmented)?;

    Ok(Workflow {
        liver_dice: last(&liver_curve),
        liver_secs,
        balanced,
        unbalanced,
        lesion_fraction,
        ablation_secs,
        segmented,
        segment_secs,
        cascade,
        refined,
        single,
        suppressed,
        single_hits,
        distractors,
        hashes: hash_tree(out)?,
    })
}

fn stat(s: &[MetricSummary], label: u8, f: fn(&MetricSummary) -> Option<f64>) -> f64 {
    s.iter().find(|s| s.label == label).and_then(f).unwrap_or(f64::NAN)
}

fn dice(s: &MetricSummary) -> Option<f64> {
    s.dice.map(|m| m.mean)
}

fn msd(s: &MetricSummary) -> Option<f64> {
    s.msd_mm.map(|m| m.mean)
}

fn workflow_criteria(w: &Workflow, start: Instant) -> Vec<Outcome> {
    let mut v = Vec::new();

    let (pb, pu) = (peak(&w.balanced), peak(&w.unbalanced));
    v.push(outcome(
        "6",
        "class-balancing ablation",
        start,
        w.lesion_fraction < 0.01 && pb >= 0.5 && pu < pb && w.ablation_secs < 1800.0,
        format!(
            "lesion fraction {:.3}%; held-out lesion Dice within 2000 iterations: balanced peak {pb:.3} (final {:.3}), \
             unbalanced peak {pu:.3} (final {:.3}); need balanced >= 0.5 and unbalanced strictly lower; both runs {:.0} s (limit 1800 s)",
            100.0 * w.lesion_fraction,
            last(&w.balanced),
            last(&w.unbalanced),
            w.ablation_secs
        ),
    ));

    let (dc, ds) = (stat(&w.cascade, LESION, dice), stat(&w.single, LESION, dice));
    v.push(outcome(
        "7",
        "cascade superiority",
        start,
        dc > ds && w.suppressed >= 1 && w.segment_secs < 600.0,
        format!(
            "test lesion Dice cascade {dc:.3} vs single net {ds:.3}; {} of {} distractors labeled lesion by the single net, \
             {} of those background under the cascade; inference {:.0} s (limit 600 s)",
            w.single_hits, w.distractors, w.suppressed, w.segment_secs
        ),
    ));

    let (du, dr) = (stat(&w.cascade, LIVER, dice), stat(&w.refined, LIVER, dice));
    let (mu, mr) = (stat(&w.cascade, LIVER, msd), stat(&w.refined, LIVER, msd));
    v.push(outcome(
        "8",
        "CRF refinement direction",
        start,
        dr >= du - 0.005 && mr <= mu,
        format!(
            "test liver Dice {du:.4} -> {dr:.4} (need >= unrefined - 0.005), mean liver MSD {mu:.2} -> {mr:.2} mm (must not increase); \
             lesion Dice {:.3} -> {:.3}",
            stat(&w.cascade, LESION, dice),
            stat(&w.refined, LESION, dice)
        ),
    ));

    let worst = w.segmented.iter().map(|s| s.seconds).fold(0.0, f64::max);
    v.push(outcome(
        "9",
        "end-to-end throughput",
        start,
        !w.segmented.is_empty() && worst < 100.0,
        format!(
            "preprocess + cascade + CRF per 64^3 volume: max {worst:.1} s over {} volumes (limit 100 s)",
            w.segmented.len()
        ),
    ));

    v.push(outcome(
        "9a",
        "liver network",
        start,
        w.liver_dice > 0.90 && w.liver_secs < 900.0,
        format!(
            "held-out liver slice Dice after 2000 iterations {:.4} (need > 0.90); training {:.0} s (limit 900 s)",
            w.liver_dice, w.liver_secs
        ),
    ));
    v
}

fn criterion_10(a: &Workflow, b: &Workflow, start: Instant) -> Outcome {
    let differing: Vec<&String> = a
        .hashes
        .iter()
        .filter(|(k, h)| b.hashes.get(*k) != Some(h))
        .map(|(k, _)| k)
        .chain(b.hashes.keys().filter(|k| !a.hashes.contains_key(*k)))
        .collect();
    outcome(
        "10",
        "determinism",
        start,
        differing.is_empty() && !a.hashes.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two full reruns (SHA-256)", a.hashes.len())
        } else {
            format!("{} of {} artifacts differ, e.g. {}", differing.len(), a.hashes.len(), differing[0])
        },
    )
}

fn main() {
    let (c1, c2) = criteria_1_2();
    let mut all = vec![c1, c2, criterion_3(), criterion_4(), criterion_5()];
    for o in &all {
        report(o);
    }

    let tmp = tempfile::tempdir().expect("temporary directory");
    let start = Instant::now();
    let first = workflow(&tmp.path().join("run_a"));
    let second = workflow(&tmp.path().join("run_b"));
    drop(tmp);
    match (&first, &second) {
        (Ok(a), Ok(b)) => {
            let mut rest = workflow_criteria(a, start);
            rest.push(criterion_10(a, b, start));
            for o in &rest {
                report(o);
            }
            all.extend(rest);
        }
        (Err(e), _) | (_, Err(e)) => {
            println!("[FAIL] workflow error: {e:#}");
            std::process::exit(1);
        }
    }

    let failed: Vec<&str> = all.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} checks passed", all.len());
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
