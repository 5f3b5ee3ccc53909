use std::collections::{BTreeMap, HashMap};

use crate::metrics::{aggregate, BleuMode, ScoreReport, ScoredPair};

use super::{OrchestratorError, Phase, Result, Strategy, StrategyConfig, TranslationRecord};

/// Scores of one strategy across its repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub label: String,
    pub n_runs: usize,
    /// Per-run scores; empty when loaded from a CSV report.
    pub runs: Vec<ScoreReport>,
    pub mean: ScoreReport,
    pub std: ScoreReport,
}

impl StrategyReport {
    pub fn config(&self) -> Option<StrategyConfig> {
        StrategyConfig::parse_label(&self.label).ok()
    }
}

/// Scores every (strategy, run) group of final records and aggregates over
/// runs. Strategies keep their first-appearance order. Every run of a
/// strategy must cover the same sentence ids.
pub fn score_records(records: &[TranslationRecord], mode: BleuMode) -> Result<Vec<StrategyReport>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, BTreeMap<usize, Vec<ScoredPair>>> = HashMap::new();
    for r in records.iter().filter(|r| r.phase == Phase::Final) {
        if !groups.contains_key(r.strategy.as_str()) {
            order.push(&r.strategy);
        }
        groups
            .entry(&r.strategy)
            .or_default()
            .entry(r.run)
            .or_default()
            .push(ScoredPair::new(r.id.as_str(), &r.hypothesis, &r.reference));
    }
    let mut out = Vec::with_capacity(order.len());
    for label in order {
        let runs = &groups[label];
        let mut expected: Option<Vec<&str>> = None;
        let mut scores = Vec::with_capacity(runs.len());
        for (run, pairs) in runs {
            let mut ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
            ids.sort_unstable();
            match &expected {
                None => expected = Some(ids),
                Some(e) if *e != ids => {
                    return Err(OrchestratorError::Data(format!(
                        "{label}: run {run} covers different sentences than the first run"
                    )))
                }
                Some(_) => {}
            }
            scores.push(ScoreReport::score(pairs, mode)?);
        }
        let (mean, std) = aggregate(&scores)?;
        out.push(StrategyReport {
            label: label.to_string(),
            n_runs: scores.len(),
            runs: scores,
            mean,
            std,
        });
    }
    Ok(out)
}

fn base_name(cfg: &StrategyConfig) -> String {
    match cfg.strategy {
        Strategy::Zeroshot => "Zeroshot".into(),
        Strategy::Nshot => format!("{}-shots", cfg.n_shots),
        Strategy::KnnRpc => format!("Knn-Prompting w. RPC (k={})", cfg.k),
        Strategy::Cot => "CoT Prompting".into(),
        Strategy::Lfm => "LFM Prompting".into(),
    }
}

/// Table row names; CoT and LFM rows gain `(k=.., q=..)` only when two rows
/// would otherwise share a name.
pub fn display_names(reports: &[StrategyReport]) -> Vec<String> {
    let names: Vec<String> = reports
        .iter()
        .map(|r| {
            r.config()
                .map_or_else(|| r.label.clone(), |c| base_name(&c))
        })
        .collect();
    names
        .iter()
        .zip(reports)
        .map(|(name, r)| {
            let clash = names.iter().filter(|n| *n == name).count() > 1;
            match r.config() {
                Some(c) if clash && matches!(c.strategy, Strategy::Cot | Strategy::Lfm) => {
                    format!("{name} (k={}, q={})", c.k, c.q)
                }
                _ => name.clone(),
            }
        })
        .collect()
}

/// `method,k,q,metric,mean,std,n_runs`. `k` holds the shot count for
/// n-shot rows; unused parameters are blank.
pub fn render_csv(reports: &[StrategyReport]) -> String {
    let mut out = String::from("method,k,q,metric,mean,std,n_runs\n");
    for r in reports {
        let (method, k, q) = match r.config() {
            Some(c) => match c.strategy {
                Strategy::Zeroshot => (
                    c.strategy.as_str().to_string(),
                    String::new(),
                    String::new(),
                ),
                Strategy::Nshot => (
                    c.strategy.as_str().to_string(),
                    c.n_shots.to_string(),
                    String::new(),
                ),
                Strategy::KnnRpc => (
                    c.strategy.as_str().to_string(),
                    c.k.to_string(),
                    String::new(),
                ),
                Strategy::Cot | Strategy::Lfm => (
                    c.strategy.as_str().to_string(),
                    c.k.to_string(),
                    c.q.to_string(),
                ),
            },
            None => (r.label.replace(',', ";"), String::new(), String::new()),
        };
        for ((metric, mean), std) in ScoreReport::METRICS
            .iter()
            .zip(r.mean.values())
            .zip(r.std.values())
        {
            out.push_str(&format!(
                "{method},{k},{q},{metric},{mean:.4},{std:.4},{}\n",
                r.n_runs
            ));
        }
    }
    out
}

/// Reads a report written by [`render_csv`]. Rows keep file order.
pub fn parse_csv(text: &str) -> Result<Vec<StrategyReport>> {
    let mut out: Vec<StrategyReport> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        let err = |reason: String| OrchestratorError::Records {
            line: idx + 1,
            reason,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 columns, found {}", f.len())));
        }
        let label = match (f[0], f[1], f[2]) {
            ("zeroshot", "", "") => "zeroshot".to_string(),
            ("nshot", n, "") => format!("nshot:n={n}"),
            ("knn_rpc", k, "") => format!("knn_rpc:k={k}"),
            (m @ ("cot" | "lfm"), k, q) => format!("{m}:k={k},q={q}"),
            (m, _, _) => m.to_string(),
        };
        let metric = ScoreReport::METRICS
            .iter()
            .position(|m| *m == f[3])
            .ok_or_else(|| err(format!("unknown metric `{}`", f[3])))?;
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| err(format!("`{v}` is not a number")))
        };
        let (mean, std) = (num(f[4])?, num(f[5])?);
        let n_runs = f[6]
            .parse()
            .map_err(|_| err(format!("`{}` is not a count", f[6])))?;
        if out.last().is_none_or(|r| r.label != label) {
            out.push(StrategyReport {
                label,
                n_runs,
                runs: Vec::new(),
                mean: ScoreReport::default(),
                std: ScoreReport::default(),
            });
        }
        let r = out.last_mut().expect("just pushed");
        let set = |s: &mut ScoreReport, v: f64| match metric {
            0 => s.bleu1 = v,
            1 => s.bleu2 = v,
            2 => s.bleu3 = v,
            _ => s.chrf = v,
        };
        set(&mut r.mean, mean);
        set(&mut r.std, std);
    }
    Ok(out)
}

/// Aligned plain-text table, one row per strategy, `mean ± std` cells.
pub fn render_table(reports: &[StrategyReport], mode: BleuMode) -> String {
    let names = display_names(reports);
    let cells: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            r.mean
                .values()
                .iter()
                .zip(r.std.values())
                .map(|(m, s)| format!("{m:.1} ± {s:.1}"))
                .collect()
        })
        .collect();
    let name_w = names
        .iter()
        .map(|n| n.chars().count())
        .chain([6])
        .max()
        .unwrap_or(6);
    let col_w = cells
        .iter()
        .flatten()
        .map(|c| c.chars().count())
        .chain(ScoreReport::METRICS.iter().map(|m| m.len() + 4))
        .max()
        .unwrap_or(10);
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
    let lpad =
        |s: &str, w: usize| format!("{}{s}", " ".repeat(w.saturating_sub(s.chars().count())));
    let mut out = pad("Method", name_w);
    for m in ScoreReport::METRICS {
        out.push_str("  ");
        out.push_str(&lpad(&format!("{m} STD"), col_w));
    }
    out.push('\n');
    out.push_str(&"-".repeat(name_w + 4 * (col_w + 2)));
    out.push('\n');
    for (name, row) in names.iter().zip(&cells) {
        out.push_str(&pad(name, name_w));
        for c in row {
            out.push_str("  ");
            out.push_str(&lpad(c, col_w));
        }
        out.push('\n');
    }
    let runs: Vec<String> = reports.iter().map(|r| r.n_runs.to_string()).collect();
    out.push_str(&format!(
        "\nruns per row: {}; std: population; BLEU: {}, corpus-level, no smoothing\n",
        runs.join(", "),
        mode.as_str()
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentenceId;

    fn rec(id: &str, strategy: &str, run: usize, hyp: &str, reference: &str) -> TranslationRecord {
        TranslationRecord {
            id: SentenceId::new(id),
            strategy: strategy.into(),
            run,
            phase: Phase::Final,
            source: "src".into(),
            reference: reference.into(),
            hypothesis: hyp.into(),
        }
    }

    #[test]
    fn perfect_copy_scores_100() {
        let records = vec![
            rec("1", "knn_rpc:k=5", 0, "a b c .", "a b c ."),
            rec("2", "knn_rpc:k=5", 0, "d e f g", "d e f g"),
        ];
        let reports = score_records(&records, BleuMode::Cumulative).unwrap();
        assert_eq!(reports.len(), 1);
        for v in reports[0].mean.values() {
            assert!((v - 100.0).abs() < 1e-9);
        }
        assert_eq!(reports[0].std.values(), [0.0; 4]);
    }

    #[test]
    fn std_over_three_runs_by_hand() {
        // BLEU1 per run: 100, 50, 0
        let records = vec![
            rec("1", "zeroshot", 0, "a b", "a b"),
            rec("1", "zeroshot", 1, "a x", "a b"),
            rec("1", "zeroshot", 2, "x y", "a b"),
        ];
        let r = &score_records(&records, BleuMode::Cumulative).unwrap()[0];
        assert_eq!(r.runs.len(), 3);
        assert!((r.mean.bleu1 - 50.0).abs() < 1e-9);
        let std = ((50.0f64 * 50.0 + 0.0 + 50.0 * 50.0) / 3.0).sqrt();
        assert!((r.std.bleu1 - std).abs() < 1e-9);
    }

    #[test]
    fn trial_records_are_not_scored() {
        let mut trial = rec("1/r3", "lfm:k=5,q=2", 0, "zzz", "a b");
        trial.phase = Phase::Trial;
        let records = vec![trial, rec("1", "lfm:k=5,q=2", 0, "a b", "a b")];
        let r = &score_records(&records, BleuMode::Cumulative).unwrap()[0];
        assert_eq!(r.mean.n_pairs, 1);
        assert!((r.mean.bleu1 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let records = vec![
            rec("1", "zeroshot", 0, "a", "a"),
            rec("2", "zeroshot", 1, "a", "a"),
        ];
        assert!(matches!(
            score_records(&records, BleuMode::Cumulative),
            Err(OrchestratorError::Data(_))
        ));
    }

    #[test]
    fn table_and_csv_layout() {
        let records = vec![
            rec("1", "zeroshot", 0, "x", "a b"),
            rec("1", "nshot:n=20", 0, "a b", "a b"),
            rec("1", "knn_rpc:k=5", 0, "a b", "a b"),
            rec("1", "cot:k=5,q=2", 0, "a b", "a b"),
            rec("1", "lfm:k=5,q=2", 0, "a b", "a b"),
        ];
        let reports = score_records(&records, BleuMode::Cumulative).unwrap();
        assert_eq!(
            display_names(&reports),
            [
                "Zeroshot",
                "20-shots",
                "Knn-Prompting w. RPC (k=5)",
                "CoT Prompting",
                "LFM Prompting"
            ]
        );
        let csv = render_csv(&reports);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 5 * 4);
        assert_eq!(lines[1], "zeroshot,,,BLEU1,0.0000,0.0000,1");
        assert!(lines.contains(&"nshot,20,,BLEU2,100.0000,0.0000,1"));
        assert!(lines.contains(&"lfm,5,2,chrF++,100.0000,0.0000,1"));
        let reparsed = parse_csv(&csv).unwrap();
        assert_eq!(render_csv(&reparsed), csv);
        let table = render_table(&reports, BleuMode::Cumulative);
        assert_eq!(render_table(&reparsed, BleuMode::Cumulative), table);
        assert!(table.starts_with("Method"));
        assert!(table.contains("Knn-Prompting w. RPC (k=5)"));
        assert!(table.contains("100.0 ± 0.0"));
        let widths: Vec<usize> = table.lines().take(7).map(|l| l.chars().count()).collect();
        assert!(widths.iter().all(|w| *w == widths[0]), "{widths:?}");
    }

    #[test]
    fn duplicate_names_are_disambiguated() {
        let records = vec![
            rec("1", "cot:k=5,q=2", 0, "a", "a"),
            rec("1", "cot:k=10,q=2", 0, "a", "a"),
        ];
        let reports = score_records(&records, BleuMode::Cumulative).unwrap();
        assert_eq!(
            display_names(&reports),
            ["CoT Prompting (k=5, q=2)", "CoT Prompting (k=10, q=2)"]
        );
    }
}
