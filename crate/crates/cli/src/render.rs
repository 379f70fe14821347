use std::fmt::Write as _;

use gradebag::ensemble::EnsembleId;
use gradebag::metrics::{ClassMetrics, ClassReport};
use gradebag::pipeline::SelectionReport;
use gradebag::ClassLabel;

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn pct_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), pct)
}

fn members(bits: u8) -> String {
    EnsembleId::from_bits(bits).map_or_else(|_| format!("#{bits}"), |id| id.to_string())
}

fn class_rows(out: &mut String, r: &ClassReport) {
    let _ = writeln!(out, "  {:<6} {:>9} {:>7} {:>9} {:>7}", "", "Precision", "Recall", "F-measure", "FP rate");
    let mut row = |name: &str, m: &ClassMetrics| {
        let _ = writeln!(
            out,
            "  {:<6} {:>9} {:>7} {:>9} {:>7}",
            name,
            pct_opt(m.precision),
            pct_opt(m.recall),
            pct_opt(m.f_measure),
            pct_opt(m.false_positive_rate)
        );
    };
    row("F", &r.f);
    row("G", &r.g);
    row("W", &r.w);
    row("Macro", &r.macro_avg);
}

/// Human-readable tables, percentages to one decimal.
pub fn text(r: &SelectionReport) -> String {
    let mut out = String::new();
    let mode = match r.mode {
        gradebag::ensemble::SelectionMode::Strict => "strict",
        gradebag::ensemble::SelectionMode::TargetClass => "target-class",
    };
    let _ = writeln!(
        out,
        "Selection: {mode} mode, alpha {}, {} null simulations, {} outer splits, {} ensembles",
        r.alpha, r.n_sim, r.splits, r.n_ensembles
    );
    match &r.winner {
        Some(w) => {
            let _ = writeln!(out, "\nWinner: {}  mean averaged Gini {}%", members(w.bitmask), pct(w.mean_gini));
            let t = &w.thresholds;
            let _ = writeln!(out, "\nThresholds (%): F {}  G {}  W {}", pct(t.tau_f), pct(t.tau_g), pct(t.tau_w));
            let _ = writeln!(out, "\nConfusion matrix (rows actual, columns predicted)");
            let _ = writeln!(out, "  {:<3} {:>5} {:>5} {:>5}", "", "F", "G", "W");
            for c in ClassLabel::ALL {
                let row = w.confusion_matrix.counts[c.index()];
                let _ = writeln!(out, "  {:<3} {:>5} {:>5} {:>5}", c.as_str(), row[0], row[1], row[2]);
            }
            let _ = writeln!(out, "\nClass report, rows actual (%)");
            class_rows(&mut out, &w.class_report.per_class);
            let _ = writeln!(out, "\nClass report, rows predicted (%)");
            class_rows(&mut out, &w.class_report.transposed);
            let _ = writeln!(out, "\nAccuracy: {}%", pct_opt(w.class_report.accuracy));
        }
        None => {
            let _ = writeln!(
                out,
                "\nNo winner: {}",
                r.no_winner_reason.as_deref().unwrap_or("no ensemble passed the significance gate")
            );
        }
    }
    let _ = writeln!(out, "\nBase learners and ensemble (%)");
    let _ = writeln!(out, "  {:<24} {:>9} {:>8}", "Model", "Mean Gini", "Accuracy");
    for b in &r.base_learners {
        let _ = writeln!(out, "  {:<24} {:>9} {:>8}", b.model, pct(b.mean_gini), pct(b.accuracy));
    }
    let _ = writeln!(out, "\nTop ensembles");
    let _ = writeln!(out, "  {:>4} {:<32} {:>9} {:>11}", "Rank", "Ensemble", "Mean Gini", "Significant");
    for row in r.ranked.iter().take(10) {
        let _ = writeln!(
            out,
            "  {:>4} {:<32} {:>9} {:>11}",
            row.rank,
            members(row.bitmask),
            pct(row.mean_gini),
            if row.significant { "yes" } else { "no" }
        );
    }
    if !r.notes.is_empty() {
        let _ = writeln!(out, "\nNotes");
        for n in &r.notes {
            let _ = writeln!(out, "  - {n}");
        }
    }
    out
}

/// Long format `section,row,column,value` with full precision.
pub fn csv(r: &SelectionReport) -> gradebag::Result<Vec<u8>> {
    let mut w = ::csv::Writer::from_writer(Vec::new());
    w.write_record(["section", "row", "column", "value"])?;
    let mut put = |s: &str, row: &str, col: &str, v: String| w.write_record([s, row, col, v.as_str()]);
    put("selection", "", "alpha", r.alpha.to_string())?;
    put("selection", "", "n_sim", r.n_sim.to_string())?;
    put("selection", "", "splits", r.splits.to_string())?;
    put("selection", "", "n_ensembles", r.n_ensembles.to_string())?;
    if let Some(win) = &r.winner {
        put("winner", "", "bitmask", win.bitmask.to_string())?;
        put("winner", "", "mean_gini", win.mean_gini.to_string())?;
        for c in ClassLabel::ALL {
            put("thresholds", "", c.as_str(), win.thresholds.get(c).to_string())?;
        }
        for a in ClassLabel::ALL {
            for p in ClassLabel::ALL {
                put(
                    "confusion_matrix",
                    a.as_str(),
                    p.as_str(),
                    win.confusion_matrix.counts[a.index()][p.index()].to_string(),
                )?;
            }
        }
        for (section, rep) in [("per_class", &win.class_report.per_class), ("transposed", &win.class_report.transposed)] {
            for (name, m) in [("F", &rep.f), ("G", &rep.g), ("W", &rep.w), ("macro", &rep.macro_avg)] {
                for (col, v) in [
                    ("precision", m.precision),
                    ("recall", m.recall),
                    ("f_measure", m.f_measure),
                    ("false_positive_rate", m.false_positive_rate),
                ] {
                    put(section, name, col, v.map_or_else(String::new, |x| x.to_string()))?;
                }
            }
        }
        put("winner", "", "accuracy", win.class_report.accuracy.map_or_else(String::new, |x| x.to_string()))?;
    }
    for b in &r.base_learners {
        put("base_learners", &b.model, "mean_gini", b.mean_gini.to_string())?;
        put("base_learners", &b.model, "accuracy", b.accuracy.to_string())?;
    }
    for row in &r.ranked {
        let name = members(row.bitmask);
        put("ranked", &name, "rank", row.rank.to_string())?;
        put("ranked", &name, "mean_gini", row.mean_gini.to_string())?;
        put("ranked", &name, "significant", row.significant.to_string())?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
}
