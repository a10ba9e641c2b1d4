//! Descriptive statistics over features, models and snapshots; all outputs are CSV.

use std::io::Write;

use nnkit::{Architecture, ConvSpec, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlnError};
use crate::eval::{evaluate_repeated, EvalOptions, MetricReport};
use crate::features::{select, FeatureTable, FEATURE_COLUMNS};
use crate::graph::{graph_metrics, GraphMetrics, Timeline};
use crate::predictors::{ModelKind, ModelSpec, TrainedModel};

pub const TRIM_FRACTION: f64 = 0.05;

/// `(μ₁ − μ₀) / (σ₁ + σ₀)`.
pub fn snr_from_stats(mean_formed: f64, sd_formed: f64, mean_unformed: f64, sd_unformed: f64) -> f64 {
    (mean_formed - mean_unformed) / (sd_formed + sd_unformed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl GroupStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self { n: values.len(), mean, sd })
    }
}

/// Values in ascending order with the `⌈fraction · n⌉` largest removed.
pub fn trim_top(values: &[f64], fraction: f64) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let drop = (fraction * sorted.len() as f64).ceil() as usize;
    sorted.truncate(sorted.len().saturating_sub(drop));
    sorted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub feature: String,
    pub formed: GroupStats,
    pub unformed: GroupStats,
    pub snr: f64,
}

/// Per-feature values split by final label: the final interval's vector, or
/// every interval's when `pooled`.
fn grouped_values(table: &FeatureTable, column: usize, pooled: bool) -> [Vec<f64>; 2] {
    let mut groups = [Vec::new(), Vec::new()];
    for s in &table.series {
        let g = usize::from(s.final_label() == 1);
        if pooled {
            groups[g].extend(s.vectors.iter().map(|v| v[column]));
        } else if let Some(v) = s.vectors.last() {
            groups[g].push(v[column]);
        }
    }
    groups
}

pub fn snr_table(table: &FeatureTable, pooled: bool) -> Result<Vec<SnrRow>> {
    FEATURE_COLUMNS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let [unformed, formed] = grouped_values(table, c, pooled);
            let stats = |v: &[f64], group: &str| {
                GroupStats::of(&trim_top(v, TRIM_FRACTION))
                    .ok_or_else(|| SlnError::InvalidArgument(format!("{group} group is empty after trimming for `{name}`")))
            };
            let formed = stats(&formed, "formed")?;
            let unformed = stats(&unformed, "unformed")?;
            Ok(SnrRow {
                feature: name.to_string(),
                snr: snr_from_stats(formed.mean, formed.sd, unformed.mean, unformed.sd),
                formed,
                unformed,
            })
        })
        .collect()
}

pub fn write_snr_csv<W: Write>(rows: &[SnrRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "formed_n", "formed_mean", "formed_sd", "unformed_n", "unformed_mean", "unformed_sd", "snr"])?;
    for r in rows {
        w.write_record([
            r.feature.clone(),
            r.formed.n.to_string(),
            r.formed.mean.to_string(),
            r.formed.sd.to_string(),
            r.unformed.n.to_string(),
            r.unformed.mean.to_string(),
            r.unformed.sd.to_string(),
            r.snr.to_string(),
        ])?;
    }
    w.flush().map_err(|e| SlnError::Format(e.to_string()))?;
    Ok(())
}

/// Empirical CDF as `(value, F(value))` at each sorted sample.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.iter().enumerate().map(|(k, &v)| (v, (k + 1) as f64 / n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurves {
    pub feature: String,
    pub formed: Vec<(f64, f64)>,
    pub unformed: Vec<(f64, f64)>,
}

pub fn cdf_export(table: &FeatureTable, feature: &str, pooled: bool) -> Result<CdfCurves> {
    let column = FEATURE_COLUMNS
        .iter()
        .position(|c| c.eq_ignore_ascii_case(feature))
        .ok_or_else(|| SlnError::InvalidArgument(format!("unknown feature `{feature}`")))?;
    let [unformed, formed] = grouped_values(table, column, pooled);
    Ok(CdfCurves {
        feature: FEATURE_COLUMNS[column].to_string(),
        formed: empirical_cdf(&formed),
        unformed: empirical_cdf(&unformed),
    })
}

pub fn write_cdf_csv<W: Write>(curves: &CdfCurves, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "group", "value", "cdf"])?;
    for (group, curve) in [("formed", &curves.formed), ("unformed", &curves.unformed)] {
        for (v, f) in curve {
            w.write_record([curves.feature.as_str(), group, &v.to_string(), &f.to_string()])?;
        }
    }
    w.flush().map_err(|e| SlnError::Format(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Nei,
    Path,
    Post,
}

impl FeatureGroup {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Self::Nei => &["ja", "ad", "re", "pr"],
            Self::Path => &["lp", "np"],
            Self::Post => &["to"],
        }
    }
}

impl std::str::FromStr for FeatureGroup {
    type Err = SlnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nei" => Ok(Self::Nei),
            "path" => Ok(Self::Path),
            "post" => Ok(Self::Post),
            other => Err(SlnError::InvalidArgument(format!("unknown feature group `{other}`"))),
        }
    }
}

/// CRNN spec restricted to `groups`. Below five features the second conv layer
/// goes; a first-layer kernel wider than the input is narrowed to fit.
pub fn ablation_spec(groups: &[FeatureGroup], base: &ModelSpec) -> Result<ModelSpec> {
    if groups.is_empty() {
        return Err(SlnError::InvalidArgument("ablation needs at least one feature group".into()));
    }
    let columns: Vec<String> = FEATURE_COLUMNS
        .iter()
        .filter(|c| groups.iter().any(|g| g.columns().contains(c)))
        .map(|c| c.to_string())
        .collect();
    let n = columns.len();
    let Architecture::Crnn { mut convs, cells, dense } = Architecture::crnn() else {
        unreachable!("crnn constructor")
    };
    if n < 5 {
        convs.truncate(1);
    }
    for c in &mut convs {
        *c = ConvSpec { maps: c.maps, width: c.width.min(n) };
    }
    let mut spec = base.clone();
    spec.kind = ModelKind::Crnn;
    spec.columns = columns;
    spec.architecture = Some(Architecture::Crnn { convs, cells, dense });
    Ok(spec)
}

pub fn ablation(groups: &[FeatureGroup], base: &ModelSpec, table: &FeatureTable, dataset: &str, options: EvalOptions) -> Result<MetricReport> {
    let spec = ablation_spec(groups, base)?;
    let mut report = evaluate_repeated(&spec, table, dataset, options)?;
    let names: Vec<String> = groups.iter().map(|g| format!("{g:?}").to_lowercase()).collect();
    report.model = format!("crnn[{}]", names.join("+"));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateTrace {
    pub u: String,
    pub v: String,
    /// `(gate name, neuron × interval matrix)` for g, i, f, o, z, h.
    pub gates: Vec<(String, Vec<Vec<f64>>)>,
}

pub fn gate_trace(model: &TrainedModel, table: &FeatureTable, pair: usize) -> Result<GateTrace> {
    let net = model.network().ok_or(SlnError::Nn(nnkit::NnError::NoRecurrentLayer))?;
    if net.lstm_cell().is_none() {
        return Err(SlnError::Nn(nnkit::NnError::NoRecurrentLayer));
    }
    let series = table
        .series
        .get(pair)
        .ok_or_else(|| SlnError::InvalidArgument(format!("pair index {pair} out of range")))?;
    let columns = model.spec.column_indices()?;
    let std = model
        .standardizer
        .as_ref()
        .ok_or_else(|| SlnError::Format("network without standardizer".into()))?;
    let mut data = Vec::with_capacity(series.vectors.len() * columns.len());
    for v in &series.vectors {
        std.apply(&select(v, &columns), &mut data);
    }
    let x = Tensor::new(vec![series.vectors.len(), columns.len()], data)?;
    let states = net.lstm_trace(&x)?;
    let hidden = states.first().map_or(0, |s| s.h.len());
    let pick: [(&str, fn(&nnkit::LstmState) -> &Vec<f64>); 6] = [
        ("g", |s| &s.g),
        ("i", |s| &s.i),
        ("f", |s| &s.f),
        ("o", |s| &s.o),
        ("z", |s| &s.z),
        ("h", |s| &s.h),
    ];
    let gates = pick
        .iter()
        .map(|(name, get)| {
            let matrix = (0..hidden).map(|k| states.iter().map(|s| get(s)[k]).collect()).collect();
            (name.to_string(), matrix)
        })
        .collect();
    Ok(GateTrace {
        u: table.learners[series.u].clone(),
        v: table.learners[series.v].clone(),
        gates,
    })
}

pub fn write_gate_csv<W: Write>(trace: &GateTrace, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let steps = trace.gates.first().and_then(|(_, m)| m.first()).map_or(0, Vec::len);
    let mut header = vec!["gate".to_string(), "neuron".into()];
    header.extend((1..=steps).map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for (gate, matrix) in &trace.gates {
        for (k, row) in matrix.iter().enumerate() {
            let mut rec = vec![gate.clone(), k.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| SlnError::Format(e.to_string()))?;
    Ok(())
}

/// `graph_metrics(G(i))` for `i = 1..=L`.
pub fn graph_report(timeline: &Timeline) -> Vec<(usize, GraphMetrics)> {
    (1..=timeline.intervals()).map(|i| (i, graph_metrics(&timeline.snapshot(i)))).collect()
}

pub fn write_graph_csv<W: Write>(report: &[(usize, GraphMetrics)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "interval",
        "nodes",
        "active_nodes",
        "edges",
        "mean_degree",
        "max_degree",
        "mean_clustering",
        "mean_path_length",
        "diameter",
        "connected_pairs",
    ])?;
    for (i, m) in report {
        w.write_record([
            i.to_string(),
            m.nodes.to_string(),
            m.active_nodes().to_string(),
            m.edges.to_string(),
            m.mean_degree().to_string(),
            m.degree_distribution.keys().next_back().copied().unwrap_or(0).to_string(),
            m.mean_clustering().to_string(),
            m.mean_path_length().to_string(),
            m.diameter().to_string(),
            m.path_lengths.values().sum::<usize>().to_string(),
        ])?;
    }
    w.flush().map_err(|e| SlnError::Format(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimming_drops_the_ceiling_share_of_largest_values() {
        let v: Vec<f64> = (0..21).map(f64::from).rev().collect();
        let t = trim_top(&v, 0.05);
        assert_eq!(t.len(), 19);
        assert_eq!(t.last(), Some(&18.0));
    }

    #[test]
    fn ablation_architecture_follows_feature_count() {
        let base = ModelSpec::new(ModelKind::Crnn);
        let arch = |g: &[FeatureGroup]| ablation_spec(g, &base).unwrap().architecture.unwrap();
        let Architecture::Crnn { convs, .. } = arch(&[FeatureGroup::Nei, FeatureGroup::Path, FeatureGroup::Post]) else { panic!() };
        assert_eq!(convs.len(), 2);
        let Architecture::Crnn { convs, .. } = arch(&[FeatureGroup::Nei, FeatureGroup::Post]) else { panic!() };
        assert_eq!(convs.len(), 2);
        let Architecture::Crnn { convs, .. } = arch(&[FeatureGroup::Path, FeatureGroup::Post]) else { panic!() };
        assert_eq!(convs, vec![ConvSpec { maps: 64, width: 3 }]);
        let Architecture::Crnn { convs, .. } = arch(&[FeatureGroup::Post]) else { panic!() };
        assert_eq!(convs, vec![ConvSpec { maps: 64, width: 1 }]);
    }
}
