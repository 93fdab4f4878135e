//! Plain-text report rendering: one dotted key per line, `key = value`,
//! floats in shortest round-trip form so same-seed runs emit identical bytes.

use std::fmt::Write as _;

use edseq_core::domain::UdaReport;
use edseq_core::metrics::{CorpusStats, EvalReport, HeterogeneityReport, MismatchReport, TaskScore};

fn floats(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn task(out: &mut String, prefix: &str, score: &TaskScore) {
    let _ = writeln!(out, "{prefix}.tp = {}", score.tp);
    let _ = writeln!(out, "{prefix}.fp = {}", score.fp);
    let _ = writeln!(out, "{prefix}.fn = {}", score.fn_);
    let _ = writeln!(out, "{prefix}.precision = {}", score.precision);
    let _ = writeln!(out, "{prefix}.recall = {}", score.recall);
    let _ = writeln!(out, "{prefix}.f1 = {}", score.f1);
}

pub fn eval_report(report: &EvalReport) -> String {
    let mut out = String::new();
    task(&mut out, "identification", &report.identification);
    task(&mut out, "classification", &report.classification);
    for (domain, (id, cls)) in &report.per_domain {
        task(&mut out, &format!("domain.{domain}.identification"), id);
        task(&mut out, &format!("domain.{domain}.classification"), cls);
    }
    for (bucket, (id, cls)) in &report.per_bucket {
        task(&mut out, &format!("bucket.{bucket}.identification"), id);
        task(&mut out, &format!("bucket.{bucket}.classification"), cls);
    }
    for (ty, score) in &report.per_type {
        task(&mut out, &format!("type.{ty}"), score);
    }
    out
}

pub fn heterogeneity(report: &HeterogeneityReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "heterogeneity.domains = {}", report.domains.join(","));
    for (domain, dist) in &report.distributions {
        let _ = writeln!(out, "heterogeneity.distribution.{domain} = {}", floats(dist));
    }
    for ((a, b), w) in &report.pairwise {
        let _ = writeln!(out, "heterogeneity.wasserstein.{a}/{b} = {w}");
    }
    let _ = writeln!(out, "heterogeneity.avg_wasserstein = {}", report.avg_wasserstein);
    for (domain, density) in &report.event_density {
        let _ = writeln!(out, "heterogeneity.event_density.{domain} = {density}");
    }
    let _ = writeln!(out, "heterogeneity.event_density_std = {}", report.event_density_std);
    out
}

pub fn corpus_stats(stats: &CorpusStats) -> String {
    let mut out = String::new();
    let buckets = ["1_2", "3_4", "5_plus"];
    for (i, b) in buckets.iter().enumerate() {
        let _ = writeln!(out, "stats.trigger_len.{b}.count = {}", stats.trigger_len_counts[i]);
        let _ = writeln!(out, "stats.trigger_len.{b}.share = {}", stats.trigger_len_shares[i]);
    }
    let _ = writeln!(out, "stats.multi_event_proportion = {}", stats.multi_event_proportion);
    let _ =
        writeln!(out, "stats.multi_event_proportion_all = {}", stats.multi_event_proportion_all);
    for (domain, density) in &stats.event_density {
        let _ = writeln!(out, "stats.event_density.{domain} = {density}");
    }
    let _ = writeln!(out, "stats.event_density_std = {}", stats.event_density_std);
    for (domain, len) in &stats.mean_sentence_len {
        let _ = writeln!(out, "stats.mean_sentence_len.{domain} = {len}");
    }
    let _ = writeln!(out, "stats.sentence_len_std = {}", stats.sentence_len_std);
    out
}

pub fn mismatch(report: &MismatchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mismatch.regular_pct = {}", report.regular_pct);
    let _ = writeln!(out, "mismatch.cross_word_pct = {}", report.cross_word_pct);
    let _ = writeln!(out, "mismatch.inside_word_pct = {}", report.inside_word_pct);
    out
}

/// Two evaluation blocks (in-domain, out-of-domain) plus the adaptation
/// bookkeeping: tuned threshold and domain-classifier accuracy per stage.
pub fn uda_report(report: &UdaReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "uda.tau = {}", report.tau);
    for (stage, acc) in &report.classifier_accuracy {
        let _ = writeln!(out, "uda.classifier_accuracy.{stage} = {acc}");
    }
    out.push_str("\n# in-domain (source test)\n");
    for line in eval_report(&report.in_domain).lines() {
        let _ = writeln!(out, "in_domain.{line}");
    }
    out.push_str("\n# out-of-domain (target test)\n");
    for line in eval_report(&report.out_of_domain).lines() {
        let _ = writeln!(out, "out_of_domain.{line}");
    }
    out
}
