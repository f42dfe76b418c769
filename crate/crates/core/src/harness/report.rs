//! Summary tables and SVG plots from one run directory or a directory of
//! runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::run::{
    metrics_csv, read_metrics, read_scores, stage, MetricRow, ScoreRow, CONFUSION_FILE, METRICS_FILE, SCORES_FILE,
};
use crate::metrics::{openness, roc_curve};
use crate::rfgen::ClassLabel;
use crate::{Error, Result};

pub const REPORT_DIR: &str = "report";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct RunData {
    name: String,
    dir: PathBuf,
    rows: Vec<MetricRow>,
}

/// Named `(x, y)` series drawn into one plot.
type Lines = Vec<(String, Vec<(f64, f64)>)>;

fn find_runs(root: &Path) -> Result<Vec<RunData>> {
    let mut dirs = Vec::new();
    if root.join(METRICS_FILE).is_file() {
        dirs.push(root.to_path_buf());
    } else if root.is_dir() {
        let mut subs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(METRICS_FILE).is_file())
            .collect();
        subs.sort();
        dirs = subs;
    }
    let mut runs = Vec::new();
    for dir in dirs {
        let rows = read_metrics(&dir.join(METRICS_FILE))?;
        if rows.is_empty() {
            continue;
        }
        let name = rows[0].run_id.clone();
        runs.push(RunData { name, dir, rows });
    }
    if runs.is_empty() {
        return Err(Error::NothingToReport(root.to_path_buf()));
    }
    Ok(runs)
}

/// `(x, y)` series of `metric` in `stage`, with x parsed from `key=x` groups.
fn series(rows: &[MetricRow], stage: &str, metric: &str, key: &str) -> Vec<(f64, f64)> {
    let prefix = format!("{key}=");
    let mut pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.stage == stage && r.metric == metric)
        .filter_map(|r| r.group.strip_prefix(&prefix)?.parse::<f64>().ok().map(|x| (x, r.value)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

fn plot_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Plot(format!("{e:?}"))
}

fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, lines: &Lines) -> Result<()> {
    let pts = lines.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(Error::Plot(format!("{title}: no points")));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for (i, (name, s)) in lines.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    if lines.len() > 1 || !lines[0].0.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn split_scores(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (known, unknown): (Vec<ScoreRow>, Vec<ScoreRow>) = read_scores(path)?.into_iter().partition(|s| s.known);
    Ok((
        known.iter().map(|s| s.score).collect(),
        unknown.iter().map(|s| s.score).collect(),
    ))
}

/// Openness for 1..=6 known classes out of the 7 emitter classes.
pub fn openness_table() -> Result<String> {
    let n = ClassLabel::ALL.len();
    let mut out = String::from("known_classes,unknown_classes,openness\n");
    for k in 1..n {
        let _ = writeln!(out, "{k},{},{:.4}", n - k, openness(k, n)?);
    }
    Ok(out)
}

/// Build `report/` under `dir`: summary and openness tables, copies of
/// confusion matrices, and loss / accuracy-per-round / per-SNR / ROC plots
/// wherever the runs carry the data for them.
pub fn export_report(dir: &Path) -> Result<ReportBundle> {
    let runs = find_runs(dir)?;
    let out = dir.join(REPORT_DIR);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut files = Vec::new();
    let mut save = |name: &str, text: &str| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        files.push(p);
        Ok(())
    };

    let evaluated: Vec<MetricRow> = runs
        .iter()
        .flat_map(|r| r.rows.iter().filter(|r| r.stage == stage::EVALUATE).cloned())
        .collect();
    save("summary.csv", &metrics_csv(&evaluated)?)?;
    save("openness.csv", &openness_table()?)?;
    for run in &runs {
        let src = run.dir.join(CONFUSION_FILE);
        if src.is_file() {
            let text = std::fs::read_to_string(&src).map_err(|e| Error::io(&src, e))?;
            save(&format!("confusion_{}.csv", run.name), &text)?;
        }
    }

    let multi = runs.len() > 1;
    let label = |r: &RunData| if multi { r.name.clone() } else { String::new() };
    let mut plots: Vec<(&str, &str, &str, &str, Lines)> = Vec::new();
    let collect = |stage: &str, metric: &str, key: &str| -> Lines {
        runs.iter()
            .map(|r| (label(r), series(&r.rows, stage, metric, key)))
            .filter(|(_, s)| !s.is_empty())
            .collect()
    };
    plots.push((
        "loss.svg",
        "Training loss",
        "epoch",
        "loss",
        collect(stage::TRAIN, "loss", "epoch"),
    ));
    plots.push((
        "accuracy_vs_round.svg",
        "Known-class accuracy per round",
        "round",
        "accuracy",
        collect(stage::FEDERATE, "accuracy", "round"),
    ));
    plots.push((
        "auroc_vs_round.svg",
        "AUROC per round",
        "round",
        "AUROC",
        collect(stage::FEDERATE, "auroc", "round"),
    ));
    plots.push((
        "accuracy_vs_snr.svg",
        "Accuracy per SNR",
        "SNR (dB)",
        "accuracy",
        collect(stage::EVALUATE, "accuracy", "snr"),
    ));

    let mut rocs = Vec::new();
    for run in &runs {
        let p = run.dir.join(SCORES_FILE);
        if p.is_file() {
            let (known, unknown) = split_scores(&p)?;
            if !known.is_empty() && !unknown.is_empty() {
                rocs.push((label(run), roc_curve(&known, &unknown)));
            }
        }
    }
    plots.push((
        "roc.svg",
        "Unknown-emitter ROC",
        "false positive rate",
        "true positive rate",
        rocs,
    ));

    let mut index: BTreeMap<&str, PathBuf> = BTreeMap::new();
    for (name, title, xl, yl, lines) in plots {
        if lines.is_empty() {
            continue;
        }
        let p = out.join(name);
        line_plot(&p, title, xl, yl, &lines)?;
        index.insert(name, p);
    }
    files.extend(index.into_values());
    files.sort();
    Ok(ReportBundle { dir: out, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_has_nothing_to_report() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(export_report(dir.path()), Err(Error::NothingToReport(_))));
    }

    #[test]
    fn openness_rows() {
        let t = openness_table().unwrap();
        let vals: Vec<&str> = t.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(vals, ["0.5000", "0.3333", "0.2254", "0.1472", "0.0871", "0.0392"]);
    }

    #[test]
    fn plots_and_tables_from_a_synthetic_run() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            MetricRow {
                run_id: "r1".into(),
                stage: "federate".into(),
                metric: "accuracy".into(),
                group: "round=1".into(),
                value: 0.5,
            },
            MetricRow {
                run_id: "r1".into(),
                stage: "federate".into(),
                metric: "accuracy".into(),
                group: "round=2".into(),
                value: 0.7,
            },
            MetricRow {
                run_id: "r1".into(),
                stage: "evaluate".into(),
                metric: "accuracy".into(),
                group: "all".into(),
                value: 0.7,
            },
        ];
        std::fs::write(
            dir.path().join(METRICS_FILE),
            super::super::run::metrics_csv(&rows).unwrap(),
        )
        .unwrap();
        std::fs::write(dir.path().join(CONFUSION_FILE), "true\\pred,a,b\na,1,0\nb,0,1\n").unwrap();
        std::fs::write(
            dir.path().join(SCORES_FILE),
            "label,known,predicted,score,snr_db,rejected\nDJI,true,DJI,0.1,0,false\nNoise,false,DJI,0.9,0,true\n",
        )
        .unwrap();
        let a = export_report(dir.path()).unwrap();
        let names: Vec<String> = a
            .files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into())
            .collect();
        for f in ["accuracy_vs_round.svg", "roc.svg", "confusion_r1.csv", "summary.csv"] {
            assert!(names.iter().any(|n| n == f), "{f} missing from {names:?}");
        }
        let summary = std::fs::read(a.dir.join("summary.csv")).unwrap();
        let b = export_report(dir.path()).unwrap();
        assert_eq!(std::fs::read(b.dir.join("summary.csv")).unwrap(), summary);
    }
}
