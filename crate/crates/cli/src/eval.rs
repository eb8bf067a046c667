use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use splitmerge_core::metrics::{cell_adjacency_f1, grid_f1, structure_to_tree, teds_struct, Prf};
use splitmerge_core::{RunConfig, StructureFile};

use crate::error::{CliError, CliResult};
use crate::io::{collect_inputs, write_json, STRUCTURE_SUFFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Cell adjacency relations between IoU-matched cells.
    Cells,
    /// Grid detection against the ground-truth lattice.
    Grid,
    /// Structure-only tree edit distance similarity.
    Teds,
    All,
}

impl Metric {
    fn wants(self, m: Metric) -> bool {
        self == Metric::All || self == m
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted structure file, or a directory of `*.structure.json`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth structure file or directory, matched to `--pred` by id.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::All)]
    metric: Metric,
    /// Write the full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct SampleScore {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teds: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Aggregate {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teds_mean: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    metric: Metric,
    cell_iou: f64,
    grid_iou: f64,
    samples: &'a [SampleScore],
    aggregate: &'a Aggregate,
}

/// Pairs predictions with ground truth by sample id.
fn pair_inputs(pred: &Path, gt: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    match (pred.is_dir(), gt.is_dir()) {
        (false, false) => {
            let id = collect_inputs(gt, STRUCTURE_SUFFIX)?.remove(0).0;
            Ok(vec![(id, pred.to_path_buf(), gt.to_path_buf())])
        }
        (true, true) => {
            let p = collect_inputs(pred, STRUCTURE_SUFFIX)?;
            let g = collect_inputs(gt, STRUCTURE_SUFFIX)?;
            let pid: BTreeSet<&str> = p.iter().map(|(id, _)| id.as_str()).collect();
            let gid: BTreeSet<&str> = g.iter().map(|(id, _)| id.as_str()).collect();
            let no_pred: Vec<&str> = gid.difference(&pid).copied().collect();
            let no_gt: Vec<&str> = pid.difference(&gid).copied().collect();
            if !no_pred.is_empty() || !no_gt.is_empty() {
                let mut msg = String::from("unmatched sample ids");
                if !no_pred.is_empty() {
                    let _ = write!(msg, "; no prediction for: {}", no_pred.join(", "));
                }
                if !no_gt.is_empty() {
                    let _ = write!(msg, "; no ground truth for: {}", no_gt.join(", "));
                }
                return Err(CliError::Input(msg));
            }
            Ok(p.into_iter()
                .zip(g)
                .map(|((id, pp), (_, gp))| (id, pp, gp))
                .collect())
        }
        _ => Err(CliError::Input(
            "--pred and --gt must both be files or both be directories".into(),
        )),
    }
}

fn score(
    id: String,
    pred: &Path,
    gt: &Path,
    metric: Metric,
    cfg: &RunConfig,
) -> CliResult<SampleScore> {
    let p = StructureFile::read(pred).map_err(CliError::at(pred))?;
    let g = StructureFile::read(gt).map_err(CliError::at(gt))?;
    let (ps, gs) = (p.structure()?, g.structure()?);
    let cells = if metric.wants(Metric::Cells) {
        Some(cell_adjacency_f1(&ps, &gs, cfg.cell_iou).map_err(CliError::at(pred))?)
    } else {
        None
    };
    Ok(SampleScore {
        id,
        cells,
        grid: metric
            .wants(Metric::Grid)
            .then(|| grid_f1(&p.lattice, &g.lattice, cfg.grid_iou)),
        teds: metric
            .wants(Metric::Teds)
            .then(|| teds_struct(&structure_to_tree(&ps), &structure_to_tree(&gs))),
    })
}

pub fn aggregate(samples: &[SampleScore]) -> Aggregate {
    let micro = |get: fn(&SampleScore) -> Option<&Prf>| {
        let v: Vec<&Prf> = samples.iter().filter_map(get).collect();
        (!v.is_empty()).then(|| Prf::micro(v))
    };
    let teds: Vec<f64> = samples.iter().filter_map(|s| s.teds).collect();
    Aggregate {
        cells: micro(|s| s.cells.as_ref()),
        grid: micro(|s| s.grid.as_ref()),
        teds_mean: (!teds.is_empty()).then(|| teds.iter().sum::<f64>() / teds.len() as f64),
    }
}

fn line(label: &str, cells: Option<&Prf>, grid: Option<&Prf>, teds: Option<f64>) -> String {
    let mut s = label.to_string();
    for (name, prf) in [("cells", cells), ("grid", grid)] {
        if let Some(m) = prf {
            let _ = write!(
                s,
                "  {name} p={:.4} r={:.4} f1={:.4}",
                m.precision, m.recall, m.f1
            );
        }
    }
    if let Some(t) = teds {
        let _ = write!(s, "  teds={t:.4}");
    }
    s
}

pub fn run(args: EvalArgs, cfg: &RunConfig) -> CliResult {
    let pairs = pair_inputs(&args.pred, &args.gt)?;
    let samples = pairs
        .into_par_iter()
        .map(|(id, p, g)| score(id, &p, &g, args.metric, cfg))
        .collect::<CliResult<Vec<_>>>()?;
    for s in &samples {
        println!("{}", line(&s.id, s.cells.as_ref(), s.grid.as_ref(), s.teds));
    }
    let agg = aggregate(&samples);
    println!(
        "{}",
        line(
            "micro",
            agg.cells.as_ref(),
            agg.grid.as_ref(),
            agg.teds_mean
        )
    );
    if let Some(path) = &args.report {
        let report = Report {
            metric: args.metric,
            cell_iou: cfg.cell_iou,
            grid_iou: cfg.grid_iou,
            samples: &samples,
            aggregate: &agg,
        };
        write_json(path, &report)?;
    }
    Ok(())
}
