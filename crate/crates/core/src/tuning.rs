//! Grid search over first-stage parameters, scored by a mean evaluation
//! metric (recall@100 by default), and heatmap emission.
//!
//! Every cell runs a full standalone search over the shared index; nothing
//! is cached between cells, so a cell's value equals an independent run
//! with the same parameters.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::Analyzer;
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::exec::Exec;
use crate::first_stage::{Bm25Params, DateFilter, FirstStageModel, Rm3Params, SdmParams};
use crate::fsutil::write_atomic_str;
use crate::index::InvertedIndex;
use crate::trec::{Judgments, QueryField, Run, Topic};

/// Axis values are rounded to this many decimals so that `0.1 + 0.2`
/// prints and compares as `0.3`.
const AXIS_DECIMALS: i32 = 10;

fn round_axis(v: f64) -> f64 {
    let scale = 10f64.powi(AXIS_DECIMALS);
    let r = (v * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(name: impl Into<String>, min: f64, max: f64, step: f64) -> Result<Self> {
        let name = name.into();
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("axis {name}: bounds must be finite")));
        }
        if step <= 0.0 {
            return Err(Error::InvalidArgument(format!("axis {name}: step must be > 0")));
        }
        if min > max {
            return Err(Error::InvalidArgument(format!("axis {name}: min {min} > max {max}")));
        }
        Ok(Axis { name, min, max, step })
    }

    pub fn fixed(name: impl Into<String>, value: f64) -> Result<Self> {
        Self::new(name, value, value, 1.0)
    }

    /// `min:max:step`, or a single value.
    pub fn parse(name: &str, spec: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("axis {name}: expected min:max:step or a number, got `{spec}`"));
        let nums: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match nums[..] {
            [v] => Self::fixed(name, v),
            [min, max, step] => Self::new(name, min, max, step),
            _ => Err(bad()),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| round_axis(self.min + i as f64 * self.step)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Bm25,
    Rm3,
    Sdm,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bm25" => Ok(ModelKind::Bm25),
            "rm3" => Ok(ModelKind::Rm3),
            "sdm" => Ok(ModelKind::Sdm),
            other => Err(Error::InvalidArgument(format!("unknown model `{other}` (bm25, rm3, sdm)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Bm25 => "bm25",
            ModelKind::Rm3 => "rm3",
            ModelKind::Sdm => "sdm",
        }
    }

    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            ModelKind::Bm25 => &["k1", "b"],
            ModelKind::Rm3 => &["k1", "b", "fb_terms", "fb_docs", "orig_weight"],
            ModelKind::Sdm => &["w_term", "w_ordered", "w_unordered", "window", "mu"],
        }
    }

    /// The sweep ranges used for the reported experiments.
    pub fn default_axes(&self) -> Vec<Axis> {
        let axis = |n: &str, a, b, s| Axis::new(n, a, b, s).expect("static axis");
        match self {
            ModelKind::Bm25 => vec![axis("k1", 0.1, 6.0, 0.1), axis("b", 0.0, 1.0, 0.05)],
            ModelKind::Rm3 => vec![axis("fb_terms", 1.0, 20.0, 1.0), axis("fb_docs", 1.0, 20.0, 1.0)],
            ModelKind::Sdm => vec![axis("w_ordered", 0.0, 1.0, 0.05), axis("w_unordered", 0.0, 1.0, 0.05)],
        }
    }

    /// Build the model for one cell. Unset parameters keep their defaults;
    /// for SDM an unswept `w_term` takes up the remaining weight mass.
    /// Returns `Ok(None)` for cells outside the SDM weight simplex.
    pub fn model_for(&self, params: &[(&str, f64)]) -> Result<Option<FirstStageModel>> {
        let get = |n: &str| params.iter().find(|(k, _)| *k == n).map(|(_, v)| *v);
        for (name, _) in params {
            if !self.parameter_names().contains(name) {
                return Err(Error::InvalidArgument(format!(
                    "`{name}` is not a {} parameter (expected one of {})",
                    self.name(),
                    self.parameter_names().join(", ")
                )));
            }
        }
        let as_count = |n: &str, d: usize| -> Result<usize> {
            match get(n) {
                None => Ok(d),
                Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
                Some(v) => Err(Error::InvalidArgument(format!("{n} must be a whole number, got {v}"))),
            }
        };
        Ok(Some(match self {
            ModelKind::Bm25 => {
                let d = Bm25Params::DEFAULT;
                FirstStageModel::Bm25(Bm25Params::new(get("k1").unwrap_or(d.k1), get("b").unwrap_or(d.b))?)
            }
            ModelKind::Rm3 => {
                let d = Bm25Params::DEFAULT;
                let r = Rm3Params::DEFAULT;
                FirstStageModel::Rm3 {
                    base: Bm25Params::new(get("k1").unwrap_or(d.k1), get("b").unwrap_or(d.b))?,
                    rm3: Rm3Params::new(
                        as_count("fb_terms", r.fb_terms)?,
                        as_count("fb_docs", r.fb_docs)?,
                        get("orig_weight").unwrap_or(r.orig_weight),
                    )?,
                }
            }
            ModelKind::Sdm => {
                let d = SdmParams::DEFAULT;
                let (wo, wu) = (get("w_ordered"), get("w_unordered"));
                let (wt, wo, wu) = match (get("w_term"), wo, wu) {
                    (Some(t), o, u) => (t, o.unwrap_or(d.w_ordered), u.unwrap_or(d.w_unordered)),
                    (None, None, None) => (d.w_term, d.w_ordered, d.w_unordered),
                    (None, o, u) => {
                        let (o, u) = (o.unwrap_or(0.0), u.unwrap_or(0.0));
                        (round_axis(1.0 - o - u), o, u)
                    }
                };
                if wt < 0.0 || (wt + wo + wu - 1.0).abs() > 1e-9 {
                    return Ok(None);
                }
                let p = SdmParams {
                    w_term: wt,
                    w_ordered: wo,
                    w_unordered: wu,
                    window: as_count("window", d.window)?,
                    mu: get("mu").unwrap_or(d.mu),
                    ..d
                };
                p.validate()?;
                FirstStageModel::Sdm(p)
            }
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub model: ModelKind,
    pub axes: Vec<Axis>,
    pub query_field: QueryField,
    pub metric: Metric,
    pub date_filter: Option<DateFilter>,
}

impl GridSpec {
    pub fn new(model: ModelKind, axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one axis".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            if !model.parameter_names().contains(&a.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "`{}` is not a {} parameter (expected one of {})",
                    a.name,
                    model.name(),
                    model.parameter_names().join(", ")
                )));
            }
            if axes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::InvalidArgument(format!("axis `{}` given twice", a.name)));
            }
        }
        Ok(GridSpec {
            model,
            axes,
            query_field: QueryField::Query,
            metric: Metric::RECALL100,
            date_filter: None,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.values().len()).product()
    }

    /// All cells in row-major order (last axis varies fastest), which is
    /// also lexicographic order of the parameter vectors.
    pub fn cells(&self) -> Vec<Vec<f64>> {
        let mut cells = vec![Vec::new()];
        for axis in &self.axes {
            let values = axis.values();
            cells = cells
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push(*v);
                        c
                    })
                })
                .collect();
        }
        cells
    }

    fn named<'a>(&'a self, cell: &[f64]) -> Vec<(&'a str, f64)> {
        self.axes.iter().map(|a| a.name.as_str()).zip(cell.iter().copied()).collect()
    }

    pub fn model_for(&self, cell: &[f64]) -> Result<Option<FirstStageModel>> {
        self.model.model_for(&self.named(cell))
    }

    fn depth(&self) -> usize {
        match self.metric {
            Metric::Ndcg { k, .. } | Metric::Precision { k, .. } | Metric::Judged { k } | Metric::Recall { k, .. } => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub params: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub axis_names: Vec<String>,
    pub metric: String,
    /// Evaluated cells in grid order. Cells outside the SDM weight simplex
    /// are absent.
    pub cells: Vec<CellResult>,
    pub best: CellResult,
    pub skipped: usize,
}

impl GridResult {
    pub fn best_params(&self) -> Vec<(&str, f64)> {
        self.axis_names.iter().map(String::as_str).zip(self.best.params.iter().copied()).collect()
    }

    /// Matrix view for two-axis sweeps with every cell populated.
    pub fn heatmap(&self, spec: &GridSpec) -> Option<HeatmapMatrix> {
        if spec.axes.len() != 2 || self.skipped > 0 {
            return None;
        }
        let rows = spec.axes[0].values();
        let cols = spec.axes[1].values();
        let cells = self
            .cells
            .chunks(cols.len())
            .map(|row| row.iter().map(|c| c.value).collect())
            .collect();
        Some(HeatmapMatrix {
            row_axis: spec.axes[0].name.clone(),
            col_axis: spec.axes[1].name.clone(),
            rows,
            cols,
            cells,
        })
    }

    /// One line per cell: parameter columns then the metric, comma-separated.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{},{}", self.axis_names.join(","), self.metric);
        for c in &self.cells {
            for p in &c.params {
                let _ = write!(out, "{p},");
            }
            let _ = writeln!(out, "{:.4}", c.value);
        }
        out
    }
}

/// Mean metric value of one model over the judged topics. This is the
/// per-cell computation of [`grid_search`], exposed for standalone checks.
pub fn evaluate_model(
    index: &InvertedIndex,
    analyzer: &Analyzer,
    topics: &[Topic],
    judgments: &Judgments,
    model: &FirstStageModel,
    spec: &GridSpec,
) -> Result<f64> {
    let mut run = Run::new("grid");
    for topic in topics.iter().filter(|t| judgments.has_topic(&t.id)) {
        let hits = model.search(index, analyzer, topic.field(spec.query_field), spec.depth(), spec.date_filter.as_ref());
        let hits = match hits {
            Ok(h) => h,
            Err(Error::EmptyQuery(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        run.insert(topic.id.clone(), hits);
    }
    Ok(spec.metric.evaluate(&run, judgments).mean)
}

fn better(a: &CellResult, b: &CellResult) -> bool {
    match a.value.partial_cmp(&b.value) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => a.params.partial_cmp(&b.params) == Some(Ordering::Less),
    }
}

/// Evaluate every cell and return the argmax. Ties go to the
/// lexicographically smallest parameter vector (first axis first).
pub fn grid_search(
    index: &InvertedIndex,
    analyzer: &Analyzer,
    topics: &[Topic],
    judgments: &Judgments,
    spec: &GridSpec,
    exec: Exec,
) -> Result<GridResult> {
    let judged: Vec<&str> = topics.iter().map(|t| t.id.as_str()).collect();
    let min_grade = match spec.metric {
        Metric::Recall { min_grade, .. } | Metric::Precision { min_grade, .. } => min_grade,
        _ => 1,
    };
    if judged.iter().all(|t| judgments.relevant_count(t, min_grade) == 0) {
        return Err(Error::NoRelevantJudgments);
    }

    let cells = spec.cells();
    let evaluated = exec.try_map(&cells, |cell| -> Result<Option<CellResult>> {
        let Some(model) = spec.model_for(cell)? else {
            return Ok(None);
        };
        let value = evaluate_model(index, analyzer, topics, judgments, &model, spec)?;
        Ok(Some(CellResult {
            params: cell.clone(),
            value,
        }))
    })?;
    let skipped = evaluated.iter().filter(|c| c.is_none()).count();
    let cells: Vec<CellResult> = evaluated.into_iter().flatten().collect();
    let best = cells
        .iter()
        .fold(None::<&CellResult>, |acc, c| match acc {
            Some(b) if !better(c, b) => Some(b),
            _ => Some(c),
        })
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("grid has no feasible cell".into()))?;
    Ok(GridResult {
        axis_names: spec.axes.iter().map(|a| a.name.clone()).collect(),
        metric: spec.metric.to_string(),
        cells,
        best,
        skipped,
    })
}

/// Metric surface over two axes: first axis down the rows, second across
/// the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapMatrix {
    pub row_axis: String,
    pub col_axis: String,
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
    pub cells: Vec<Vec<f64>>,
}

impl HeatmapMatrix {
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\\{}", self.row_axis, self.col_axis);
        for c in &self.cols {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (r, row) in self.rows.iter().zip(&self.cells) {
            let _ = write!(out, "{r}");
            for v in row {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::line("heatmap", line, m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty heatmap"))?;
        let mut head = header.split(',');
        let corner = head.next().unwrap_or_default();
        let (row_axis, col_axis) = corner.split_once('\\').ok_or_else(|| bad(1, "corner must be `row\\col`"))?;
        let num = |s: &str, line| s.trim().parse::<f64>().map_err(|_| bad(line, &format!("not a number: `{s}`")));
        let cols = head.map(|s| num(s, 1)).collect::<Result<Vec<_>>>()?;
        let (mut rows, mut cells) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(',');
            rows.push(num(parts.next().unwrap_or_default(), i + 2)?);
            let row = parts.map(|s| num(s, i + 2)).collect::<Result<Vec<_>>>()?;
            if row.len() != cols.len() {
                return Err(bad(i + 2, &format!("expected {} cells, found {}", cols.len(), row.len())));
            }
            cells.push(row);
        }
        Ok(HeatmapMatrix {
            row_axis: row_axis.to_string(),
            col_axis: col_axis.to_string(),
            rows,
            cols,
            cells,
        })
    }
}

pub fn emit_heatmap(matrix: &HeatmapMatrix, path: &Path) -> Result<()> {
    write_atomic_str(path, &matrix.to_text())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::index::BuildOptions;

    #[test]
    fn axis_values_do_not_drift() {
        let a = Axis::new("k1", 0.1, 6.0, 0.1).unwrap();
        let v = a.values();
        assert_eq!(v.len(), 60);
        assert_eq!(v[2], 0.3);
        assert_eq!(*v.last().unwrap(), 6.0);
        assert_eq!(Axis::new("b", 0.0, 1.0, 0.05).unwrap().values().len(), 21);
        assert_eq!(Axis::parse("b", "0.4").unwrap().values(), [0.4]);
        assert!(Axis::new("b", 1.0, 0.0, 0.1).is_err());
        assert!(Axis::new("b", 0.0, 1.0, 0.0).is_err());
        assert!(Axis::parse("b", "0:1").is_err());
    }

    #[test]
    fn cells_are_lexicographic() {
        let spec = GridSpec::new(
            ModelKind::Bm25,
            vec![Axis::parse("k1", "1:2:1").unwrap(), Axis::parse("b", "0:0.5:0.5").unwrap()],
        )
        .unwrap();
        assert_eq!(spec.cell_count(), 4);
        assert_eq!(spec.cells(), vec![vec![1.0, 0.0], vec![1.0, 0.5], vec![2.0, 0.0], vec![2.0, 0.5]]);
        assert!(GridSpec::new(ModelKind::Bm25, vec![Axis::fixed("mu", 1.0).unwrap()]).is_err());
    }

    #[test]
    fn sdm_simplex() {
        let m = ModelKind::Sdm;
        match m.model_for(&[("w_ordered", 0.1), ("w_unordered", 0.05)]).unwrap() {
            Some(FirstStageModel::Sdm(p)) => assert_eq!(p.w_term, 0.85),
            other => panic!("{other:?}"),
        }
        assert!(m.model_for(&[("w_ordered", 0.7), ("w_unordered", 0.5)]).unwrap().is_none());
    }

    fn fixture() -> (InvertedIndex, Vec<Topic>, Judgments) {
        let docs = vec![
            Document::stub("a", "coronavirus transmission in hospitals", ""),
            Document::stub("b", "coronavirus coronavirus coronavirus origin bats bats", ""),
            Document::stub("c", "mask wearing reduces transmission", ""),
            Document::stub("d", "weather patterns", ""),
        ];
        let idx = InvertedIndex::build(&docs, &Analyzer::default(), BuildOptions::default()).unwrap();
        let topic = |id: &str, q: &str| Topic {
            id: id.into(),
            query: q.into(),
            question: q.into(),
            narrative: String::new(),
        };
        let topics = vec![topic("1", "coronavirus transmission"), topic("2", "mask")];
        let j = Judgments::parse("1 0 a 2\n1 0 b 0\n2 0 c 1\n", "q").unwrap().0;
        (idx, topics, j)
    }

    #[test]
    fn single_cell_and_ties() {
        let (idx, topics, j) = fixture();
        let an = Analyzer::default();
        let mut spec = GridSpec::new(
            ModelKind::Bm25,
            vec![Axis::fixed("k1", 1.2).unwrap(), Axis::fixed("b", 0.75).unwrap()],
        )
        .unwrap();
        let r = grid_search(&idx, &an, &topics, &j, &spec, Exec::Sequential).unwrap();
        assert_eq!(r.best.params, [1.2, 0.75]);
        // recall@100 is 1 everywhere here, so the smallest cell wins
        spec.axes = vec![Axis::parse("k1", "0.5:1.5:0.5").unwrap(), Axis::parse("b", "0:1:0.5").unwrap()];
        let r = grid_search(&idx, &an, &topics, &j, &spec, Exec::Parallel).unwrap();
        assert!(r.cells.iter().all(|c| c.value == 1.0));
        assert_eq!(r.best.params, [0.5, 0.0]);
    }

    #[test]
    fn parallel_matches_sequential_and_standalone() {
        let (idx, topics, j) = fixture();
        let an = Analyzer::default();
        let mut spec = GridSpec::new(
            ModelKind::Bm25,
            vec![Axis::parse("k1", "0.5:2:0.5").unwrap(), Axis::parse("b", "0:1:0.25").unwrap()],
        )
        .unwrap();
        spec.metric = Metric::NDCG10;
        let seq = grid_search(&idx, &an, &topics, &j, &spec, Exec::Sequential).unwrap();
        let par = grid_search(&idx, &an, &topics, &j, &spec, Exec::Parallel).unwrap();
        assert_eq!(seq, par);
        for c in &seq.cells {
            let m = spec.model_for(&c.params).unwrap().unwrap();
            assert_eq!(evaluate_model(&idx, &an, &topics, &j, &m, &spec).unwrap(), c.value);
        }
    }

    #[test]
    fn no_relevant_is_an_error() {
        let (idx, topics, _) = fixture();
        let j = Judgments::parse("1 0 a 0\n", "q").unwrap().0;
        let spec = GridSpec::new(ModelKind::Bm25, ModelKind::Bm25.default_axes()).unwrap();
        assert!(matches!(
            grid_search(&idx, &Analyzer::default(), &topics, &j, &spec, Exec::Sequential),
            Err(Error::NoRelevantJudgments)
        ));
    }

    #[test]
    fn heatmap_text() {
        let m = HeatmapMatrix {
            row_axis: "k1".into(),
            col_axis: "b".into(),
            rows: vec![0.1, 0.2],
            cols: vec![0.0, 0.05],
            cells: vec![vec![0.5, 0.25], vec![1.0, 0.0]],
        };
        let text = m.to_text();
        assert_eq!(text, "k1\\b,0,0.05\n0.1,0.5000,0.2500\n0.2,1.0000,0.0000\n");
        assert_eq!(HeatmapMatrix::parse(&text).unwrap().to_text(), text);
        assert!(HeatmapMatrix::parse("k1\\b,0\n0.1,0.5,0.6\n").is_err());
    }
}
