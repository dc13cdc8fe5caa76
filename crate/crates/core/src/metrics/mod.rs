//! Efficiency and accuracy measurement: loop/latency inflation, BLEU,
//! rank correlation, and the reports, histograms, and distribution charts
//! built from attack results.

mod bleu;
mod latency;
mod report;

pub use bleu::{bleu, corpus_bleu, BLEU_MAX_N, BLEU_SMOOTH_EPS};
pub use latency::{latency_proxy_ns, measure_latency, LatencySample, COST_PER_STEP_NS};
pub use report::{
    area_under_reversed_cdf, build_report, histogram, i_latency, i_loop, reversed_cdf_points,
    spearman, Aggregates, EfficiencyReport, HistBin, LatencySource, ReportRow,
};
