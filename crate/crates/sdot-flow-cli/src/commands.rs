//! The six pipeline subcommands: dataset generation, the transport solve,
//! pair generation, training, sampling, and evaluation.
//!
//! Every command resolves its relative file keys against the output
//! directory, writes the fully resolved configuration next to its outputs
//! (`resolved-<command>.cfg`), and reports through exit codes: 0 success,
//! 1 quality threshold not met, 2 invalid input, 3 numeric abort.

use std::path::{Path, PathBuf};

use sdot_flow::flow::{self, CouplingMode, TargetField, TrainConfig};
use sdot_flow::nn::{self, Activation, MlpArch};
use sdot_flow::pairing;
use sdot_flow::rng::{self, SplitMix64};
use sdot_flow::sampler::{self, ExtraPolicy, Scheme, TrajectoryLog};
use sdot_flow::sdot::{self, SdotConfig, SdotStage};
use sdot_flow::{AdamConfig, Dataset, Error, NoisePrior, Result};

use crate::config::RunConfig;
use crate::pgm::{self, DensityGrid};
use crate::pointfile::{self, PointFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Stream salt for checkerboard point draws.
const CHECKER_SALT: u64 = 0x4348_4B52;

/// Creates the output directory and echoes the resolved configuration.
fn prepare(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(format!("resolved-{command}.cfg")), cfg.echo())?;
    Ok(out)
}

/// Relative file keys live inside the output directory; absolute ones are
/// taken as given.
fn resolve(out: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn load_dataset(out: &Path, cfg: &RunConfig) -> Result<Dataset> {
    pointfile::read_points(&resolve(out, &cfg.dataset))?.to_dataset()
}

fn adam_config(cfg: &RunConfig) -> AdamConfig {
    AdamConfig {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    }
}

/// Parses `steps:lr:batch:beta:eps[,...]` into a stage list.
fn parse_stages(text: &str) -> Result<Vec<SdotStage>> {
    let mut stages = Vec::new();
    for part in text.split(',') {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 5 {
            return Err(Error::invalid(format!(
                "stage {part:?} must have the form steps:lr:batch:beta:eps"
            )));
        }
        fn field<T: std::str::FromStr>(part: &str, raw: &str, what: &str) -> Result<T> {
            raw.parse()
                .map_err(|_| Error::invalid(format!("stage {part:?}: bad {what} {raw:?}")))
        }
        stages.push(SdotStage {
            num_steps: field(part, fields[0], "step count")?,
            learning_rate: field(part, fields[1], "learning rate")?,
            batch_size: field(part, fields[2], "batch size")?,
            ema_beta: field(part, fields[3], "ema beta")?,
            epsilon: field(part, fields[4], "epsilon")?,
        });
    }
    Ok(stages)
}

fn parse_usize_list(text: &str, key: &str) -> Result<Vec<usize>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{key}: bad entry {p:?}")))
        })
        .collect()
}

fn parse_f64_list(text: &str, key: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{key}: bad entry {p:?}")))
        })
        .collect()
}

fn parse_activation(text: &str) -> Result<Activation> {
    match text {
        "tanh" => Ok(Activation::Tanh),
        "silu" => Ok(Activation::Silu),
        _ => Err(Error::invalid(format!(
            "activation must be tanh or silu, got {text:?}"
        ))),
    }
}

fn parse_coupling(text: &str) -> Result<CouplingMode> {
    match text {
        "independent" => Ok(CouplingMode::Independent),
        "aligned" => Ok(CouplingMode::Aligned),
        _ => Err(Error::invalid(format!(
            "coupling must be independent or aligned, got {text:?}"
        ))),
    }
}

fn parse_target(text: &str) -> Result<TargetField> {
    match text {
        "vanilla" => Ok(TargetField::Vanilla),
        "shortcut" => Ok(TargetField::Shortcut),
        "meanflow" => Ok(TargetField::MeanFlow),
        _ => Err(Error::invalid(format!(
            "target must be vanilla, shortcut, or meanflow, got {text:?}"
        ))),
    }
}

fn parse_scheme(text: &str) -> Result<Scheme> {
    match text {
        "euler" => Ok(Scheme::Euler),
        "midpoint" => Ok(Scheme::Midpoint),
        "rk4" => Ok(Scheme::Rk4),
        _ => Err(Error::invalid(format!(
            "scheme must be euler, midpoint, or rk4, got {text:?}"
        ))),
    }
}

fn parse_extra(text: &str) -> Result<ExtraPolicy> {
    match text {
        "none" => Ok(ExtraPolicy::None),
        "step" => Ok(ExtraPolicy::StepSize),
        "span" => Ok(ExtraPolicy::SpanStart),
        _ => Err(Error::invalid(format!(
            "extra must be none, step, or span, got {text:?}"
        ))),
    }
}

/// Draws a fixed training set from the checkerboard density: uniform over
/// the 8 unit squares of the 4x4 grid on [-2,2]^2 where
/// `floor(x+2) + floor(y+2)` is even.
pub fn run_checkerboard(cfg: &RunConfig) -> Result<i32> {
    if cfg.checker_count == 0 {
        return Err(Error::invalid("checker_count must be at least 1"));
    }
    let out = prepare(cfg, "checkerboard")?;

    let cells: Vec<(f64, f64)> = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .filter(|(i, j)| (i + j) % 2 == 0)
        .map(|(i, j)| (j as f64 - 2.0, i as f64 - 2.0))
        .collect();
    debug_assert_eq!(cells.len(), 8);

    let mut stream = SplitMix64::new(rng::salted(cfg.master_seed, CHECKER_SALT));
    let mut points = Vec::with_capacity(cfg.checker_count * 2);
    for _ in 0..cfg.checker_count {
        // 8 divides 2^64, so masking three bits is exactly uniform; the
        // open-interval offsets keep points off the grid lines.
        let (x0, y0) = cells[(stream.next_u64() & 7) as usize];
        points.push(x0 + stream.next_unit());
        points.push(y0 + stream.next_unit());
    }
    let file = PointFile::new(2, points, vec![0; cfg.checker_count])?;
    let path = resolve(&out, &cfg.dataset);
    pointfile::write_points(&path, &file)?;
    println!(
        "checkerboard: wrote {} points to {}",
        cfg.checker_count,
        path.display()
    );
    Ok(EXIT_OK)
}

/// Fits dual weights to the dataset, one independent solve per class, and
/// writes them with the per-class metric histories. Exit code 1 when any
/// class ends with `mre_est` at or above the threshold.
pub fn run_sdot(cfg: &RunConfig) -> Result<i32> {
    let out = prepare(cfg, "sdot")?;
    let dataset = load_dataset(&out, cfg)?;
    let stages = parse_stages(&cfg.stages)?;
    if stages.is_empty() {
        return Err(Error::invalid("the sdot schedule needs at least one stage"));
    }
    let config = SdotConfig {
        stages,
        master_seed: cfg.master_seed,
        adam: adam_config(cfg),
    };
    let prior = NoisePrior::standard_normal(dataset.dim())?;
    let (duals, histories) = sdot::solve_dual_per_class(&dataset, &prior, &config)?;

    let duals_path = resolve(&out, &cfg.duals);
    sdot::write_duals(&duals_path, &duals)?;
    let mut worst = 0.0f64;
    for (class, hist) in &histories {
        sdot::write_metrics_csv(&out.join(format!("metrics_sdot_class{class}.csv")), hist)?;
        let last = hist
            .last()
            .ok_or_else(|| Error::invalid("the sdot schedule produced no steps"))?;
        worst = worst.max(last.mre_est);
        println!(
            "sdot: class {class} final mre_est {} after {} steps",
            last.mre_est, last.step
        );
    }
    if worst < cfg.threshold {
        println!(
            "sdot: converged (worst mre_est {worst} < threshold {}) -> {}",
            cfg.threshold,
            duals_path.display()
        );
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "sdot: not converged (worst mre_est {worst} >= threshold {})",
            cfg.threshold
        );
        Ok(EXIT_THRESHOLD)
    }
}

/// Generates the seeded noise-to-data pair stream through the transport map
/// and optionally rebalances per-class index counts.
pub fn run_pairs(cfg: &RunConfig) -> Result<i32> {
    let out = prepare(cfg, "pairs")?;
    let dataset = load_dataset(&out, cfg)?;
    let duals = sdot::read_duals(&resolve(&out, &cfg.duals))?;
    let count = if cfg.pair_count == 0 {
        cfg.train_steps * cfg.batch_size
    } else {
        cfg.pair_count
    };
    if count == 0 {
        return Err(Error::invalid(
            "pair_count resolves to 0 (set pair_count, or train_steps and batch_size)",
        ));
    }
    let mix = pairing::proportional_mix(&dataset, count);
    let prior = NoisePrior::standard_normal(dataset.dim())?;
    let mut records = pairing::generate_pairs(&dataset, &duals, &prior, cfg.master_seed, &mix)?;
    if cfg.rebalance {
        for (class, report) in pairing::rebalance_pairs(&mut records, &dataset)? {
            println!(
                "pairs: class {class} rebalanced {} of {} records",
                report.changed, report.total
            );
        }
    }
    let path = resolve(&out, &cfg.pairs);
    pairing::write_pairs(&path, &records, dataset.len() as u32)?;
    println!("pairs: wrote {} records to {}", records.len(), path.display());
    Ok(EXIT_OK)
}

/// Trains a velocity-field network and writes the checkpoint plus the loss
/// history CSV.
pub fn run_train(cfg: &RunConfig) -> Result<i32> {
    let out = prepare(cfg, "train")?;
    let dataset = load_dataset(&out, cfg)?;
    let target = parse_target(&cfg.target)?;
    let coupling = parse_coupling(&cfg.coupling)?;
    let arch = MlpArch::new(
        dataset.dim(),
        parse_usize_list(&cfg.hidden, "hidden")?,
        cfg.embed_width,
        target.num_extra(),
        parse_activation(&cfg.activation)?,
    )?;
    let train_cfg = TrainConfig {
        arch,
        batch_size: cfg.batch_size,
        num_steps: cfg.train_steps,
        learning_rate: cfg.learning_rate,
        loss_exponent: cfg.loss_exponent,
        coupling,
        target,
        shortcut_kappa: cfg.shortcut_kappa,
        shortcut_steps: parse_f64_list(&cfg.shortcut_steps, "shortcut_steps")?,
        meanflow_equal_prob: cfg.meanflow_equal_prob,
        master_seed: cfg.master_seed,
        adam: adam_config(cfg),
    };

    let stored;
    let pair_slice = match coupling {
        CouplingMode::Aligned => {
            let (records, size) = pairing::read_pairs(&resolve(&out, &cfg.pairs))?;
            if size as usize != dataset.len() {
                return Err(Error::DimensionMismatch {
                    expected: dataset.len(),
                    got: size as usize,
                });
            }
            stored = records;
            Some(stored.as_slice())
        }
        CouplingMode::Independent => None,
    };

    let (params, history) = flow::train(&dataset, &train_cfg, pair_slice)?;
    let ckpt_path = resolve(&out, &cfg.checkpoint);
    nn::write_checkpoint(&ckpt_path, &params)?;
    flow::write_loss_csv(&resolve(&out, &cfg.loss_csv), &history)?;
    match history.last() {
        Some(last) => println!(
            "train: {} steps, final loss_ema {} -> {}",
            last.step,
            last.loss_ema,
            ckpt_path.display()
        ),
        None => println!(
            "train: 0 steps, checkpoint holds the initialization -> {}",
            ckpt_path.display()
        ),
    }
    Ok(EXIT_OK)
}

/// Integrates `sample_count` trajectories from seeded noise (sample `i`
/// expands the seed `derive(sample_seed, i)`) and writes the endpoints,
/// the full trajectory log, and a small metadata CSV; optionally ten
/// time-slice density grids.
pub fn run_sample(cfg: &RunConfig) -> Result<i32> {
    if cfg.sample_count == 0 {
        return Err(Error::invalid("sample_count must be at least 1"));
    }
    let out = prepare(cfg, "sample")?;
    let params = nn::read_checkpoint::<f64>(&resolve(&out, &cfg.checkpoint))?;
    let scheme = parse_scheme(&cfg.scheme)?;
    let policy = parse_extra(&cfg.extra)?;
    let dim = params.arch().x_dim;

    let mut logs: Vec<TrajectoryLog> = Vec::with_capacity(cfg.sample_count);
    for i in 0..cfg.sample_count {
        let x0 = rng::normal_vector(rng::derive(cfg.sample_seed, i as u64), dim);
        logs.push(sampler::integrate(
            &params,
            &x0,
            scheme,
            cfg.sample_steps,
            policy,
        )?);
    }

    let mut flat = Vec::with_capacity(cfg.sample_count * dim);
    for log in &logs {
        flat.extend_from_slice(log.states.last().expect("logs are never empty"));
    }
    let samples_path = resolve(&out, &cfg.samples);
    pointfile::write_points(
        &samples_path,
        &PointFile::new(dim, flat, vec![0; cfg.sample_count])?,
    )?;
    sampler::write_trajectories_csv(&resolve(&out, &cfg.trajectories), &logs)?;

    let nfe = logs[0].nfe;
    std::fs::write(
        out.join("sample_meta.csv"),
        format!(
            "metric,value\nnum_samples,{}\nsteps,{}\nscheme,{}\nextra,{}\nnfe_per_sample,{}\ntotal_nfe,{}\n",
            cfg.sample_count,
            cfg.sample_steps,
            cfg.scheme,
            cfg.extra,
            nfe,
            nfe * cfg.sample_count
        ),
    )?;

    if cfg.slices {
        // Ten uniform times t = k/9; each slice rasterizes the states at the
        // nearest integration grid index.
        for k in 0..10u32 {
            let t = f64::from(k) / 9.0;
            let idx = (t * cfg.sample_steps as f64).round() as usize;
            let mut grid = DensityGrid::new();
            for log in &logs {
                grid.add(&log.states[idx]);
            }
            pgm::write_pgm(&out.join(format!("slice_{k}.pgm")), &grid)?;
        }
    }
    println!(
        "sample: {} trajectories ({nfe} network evaluations each) -> {}",
        cfg.sample_count,
        samples_path.display()
    );
    Ok(EXIT_OK)
}

/// Parses a trajectory CSV written by `sample` back into logs (trajectory
/// ids must be contiguous from 0; evaluation counts are not stored).
fn read_trajectories_csv(path: &Path) -> Result<Vec<TrajectoryLog>> {
    let text = std::fs::read_to_string(path)?;
    let fail = |line: usize, what: String| Error::Format {
        path: path.to_path_buf(),
        offset: line as u64,
        what: format!("line {line}: {what}"),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| fail(1, "missing header".into()))?;
    if !header.starts_with("traj_id,t,") {
        return Err(fail(1, format!("unexpected header {header:?}")));
    }
    let dim = header.split(',').count() - 2;

    let mut logs: Vec<TrajectoryLog> = Vec::new();
    for (ix, line) in lines {
        let lineno = ix + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = |what: &str| -> Result<&str> {
            parts.next().ok_or_else(|| fail(lineno, format!("missing {what}")))
        };
        let id: usize = field("traj_id")?
            .parse()
            .map_err(|_| fail(lineno, "bad traj_id".into()))?;
        let t: f64 = field("time")?
            .parse()
            .map_err(|_| fail(lineno, "bad time".into()))?;
        let mut state = Vec::with_capacity(dim);
        for k in 0..dim {
            state.push(
                field("coordinate")?
                    .parse()
                    .map_err(|_| fail(lineno, format!("bad coordinate {k}")))?,
            );
        }
        if parts.next().is_some() {
            return Err(fail(lineno, format!("expected {} fields", dim + 2)));
        }
        if id == logs.len() {
            logs.push(TrajectoryLog {
                times: Vec::new(),
                states: Vec::new(),
                nfe: 0,
            });
        } else if id + 1 != logs.len() {
            return Err(fail(
                lineno,
                format!("trajectory ids must be contiguous, got {id}"),
            ));
        }
        let log = logs.last_mut().expect("pushed above");
        log.times.push(t);
        log.states.push(state);
    }
    Ok(logs)
}

/// Compares the sample set against a reference set (exact transport cost
/// over the first matched points), rasterizes the sample density, and
/// summarizes trajectory straightness when a trajectory log exists.
pub fn run_eval(cfg: &RunConfig) -> Result<i32> {
    let out = prepare(cfg, "eval")?;
    let samples = pointfile::read_points(&resolve(&out, &cfg.samples))?;
    let reference = pointfile::read_points(&resolve(&out, &cfg.reference))?;
    if samples.dim != reference.dim {
        return Err(Error::DimensionMismatch {
            expected: reference.dim,
            got: samples.dim,
        });
    }

    let matched = samples.len().min(reference.len()).min(cfg.w2_max);
    let a: Vec<Vec<f64>> = (0..matched).map(|i| samples.point(i).to_vec()).collect();
    let b: Vec<Vec<f64>> = (0..matched).map(|i| reference.point(i).to_vec()).collect();
    let w2 = sampler::empirical_w2(&a, &b)?;

    let mut grid = DensityGrid::new();
    for i in 0..samples.len() {
        grid.add(samples.point(i));
    }
    pgm::write_pgm(&out.join("density.pgm"), &grid)?;

    let traj_path = resolve(&out, &cfg.trajectories);
    let mut straight_sum = 0.0;
    let mut straight_count = 0usize;
    let mut flagged = 0usize;
    if traj_path.exists() {
        let logs = read_trajectories_csv(&traj_path)?;
        let mut rows = String::from("traj_id,straightness,flagged\n");
        for (id, log) in logs.iter().enumerate() {
            let (s, too_short) = sampler::straightness(log);
            rows.push_str(&format!("{id},{s},{}\n", u8::from(too_short)));
            if too_short {
                flagged += 1;
            } else {
                straight_sum += s;
                straight_count += 1;
            }
        }
        std::fs::write(out.join("straightness.csv"), rows)?;
    }

    let mut summary = String::from("metric,value\n");
    summary.push_str(&format!("w2,{w2}\n"));
    summary.push_str(&format!("w2_count,{matched}\n"));
    summary.push_str(&format!("straightness_count,{straight_count}\n"));
    summary.push_str(&format!("straightness_flagged,{flagged}\n"));
    if straight_count > 0 {
        summary.push_str(&format!(
            "straightness_mean,{}\n",
            straight_sum / straight_count as f64
        ));
    }
    std::fs::write(out.join("summary.csv"), &summary)?;

    println!("eval: w2 {w2} over {matched} matched points");
    if straight_count > 0 {
        println!(
            "eval: mean straightness {} over {straight_count} trajectories",
            straight_sum / straight_count as f64
        );
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_strings_parse_and_validate() {
        let stages = parse_stages("100:0.5:64:0.9:1,200:0.1:128:0.99:0").unwrap();
        assert_eq!(stages.len(), 2);
        assert_eq!(stages[0].num_steps, 100);
        assert_eq!(stages[0].learning_rate, 0.5);
        assert_eq!(stages[1].batch_size, 128);
        assert_eq!(stages[1].epsilon, 0.0);

        assert!(parse_stages("").is_err());
        assert!(parse_stages("100:0.5:64:0.9").is_err());
        assert!(parse_stages("a:0.5:64:0.9:1").is_err());
    }

    #[test]
    fn list_and_enum_parsers() {
        assert_eq!(parse_usize_list("128,128", "hidden").unwrap(), vec![128, 128]);
        assert_eq!(parse_usize_list("", "hidden").unwrap(), Vec::<usize>::new());
        assert!(parse_usize_list("12,x", "hidden").is_err());
        assert_eq!(
            parse_f64_list("0.25, 0.5", "steps").unwrap(),
            vec![0.25, 0.5]
        );
        assert!(parse_activation("relu").is_err());
        assert!(parse_coupling("both").is_err());
        assert!(parse_target("ddpm").is_err());
        assert!(parse_scheme("heun").is_err());
        assert!(parse_extra("span2").is_err());
        assert_eq!(parse_scheme("rk4").unwrap(), Scheme::Rk4);
        assert_eq!(parse_extra("span").unwrap(), ExtraPolicy::SpanStart);
    }

    #[test]
    fn trajectory_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let logs = vec![
            TrajectoryLog {
                times: vec![0.0, 0.5, 1.0],
                states: vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]],
                nfe: 2,
            },
            TrajectoryLog {
                times: vec![0.0, 1.0],
                states: vec![vec![1.0, 1.0], vec![2.0, 2.0]],
                nfe: 1,
            },
        ];
        sampler::write_trajectories_csv(&path, &logs).unwrap();
        let back = read_trajectories_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].times, logs[0].times);
        assert_eq!(back[0].states, logs[0].states);
        assert_eq!(back[1].states, logs[1].states);

        std::fs::write(&path, "traj_id,t,x0\n1,0,0.5\n").unwrap();
        assert!(read_trajectories_csv(&path).is_err());
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(read_trajectories_csv(&path).is_err());
    }
}
