//! Greedy layer-wise training of the coupled network and end-to-end
//! embedding of new samples.
//!
//! Each layer is trained to completion on the clean encodings of the
//! previous one: pair sets are rebuilt from the current features, corruption
//! draws are frozen, and the layer objective is minimized with L-BFGS.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::dataset::{Split, ViewDataset};
use crate::error::{DcanError, Result};
use crate::layer::{encode, init_params, LayerParams, View};
use crate::lbfgs::{minimize_with_trace, IterRecord, LbfgsConfig, OptimStatus};
use crate::objective::{LayerObjective, ObjectiveConfig};
use crate::pairs::PairSets;
use crate::pca::{fit_pca, PcaModel};
use crate::seed::derive_seed;

/// Hyperparameters recorded with a trained model.
#[derive(Debug, Clone, Copy)]
pub struct NetworkHyper {
    pub lambda: f64,
    pub gamma: f64,
    pub k: usize,
    pub gain: f64,
}

/// The deployable cross-view embedder: PCA front-end plus a stack of coupled
/// layers.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub pca: PcaModel,
    pub layers: Vec<LayerParams>,
    pub hyper: NetworkHyper,
}

impl NetworkModel {
    /// Layer widths from the PCA output inward, e.g. [100, 90, 80].
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.pca.output_dim()];
        w.extend(self.layers.iter().map(|l| l.hidden()));
        w
    }

    /// Model with only the first `depth` layers, sharing the same PCA.
    /// Greedy training makes this exactly the model that `depth` layers of
    /// training would have produced.
    pub fn truncated(&self, depth: usize) -> NetworkModel {
        assert!(depth >= 1 && depth <= self.layers.len());
        NetworkModel {
            pca: self.pca.clone(),
            layers: self.layers[..depth].to_vec(),
            hyper: self.hyper,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Number of stacked layers, 1 to 4.
    pub num_layers: usize,
    /// Hidden width shrink per layer.
    pub width_step: usize,
    /// Explicit hidden widths overriding the derived schedule.
    pub widths_override: Option<Vec<usize>>,
    /// PCA output width feeding the first layer.
    pub pca_dim: usize,
    pub objective: ObjectiveConfig,
    pub lbfgs: LbfgsConfig,
    /// Neighbor count for the different-class pair set.
    pub knn_k: usize,
    pub gain: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            width_step: 10,
            widths_override: None,
            pca_dim: 100,
            objective: ObjectiveConfig::default(),
            lbfgs: LbfgsConfig::default(),
            knn_k: 10,
            gain: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.num_layers) {
            return Err(DcanError::Config(format!(
                "num_layers {} outside [1, 4]",
                self.num_layers
            )));
        }
        if self.pca_dim == 0 {
            return Err(DcanError::Config("pca_dim must be >= 1".into()));
        }
        if self.knn_k == 0 {
            return Err(DcanError::Config("knn_k must be >= 1".into()));
        }
        if !self.gain.is_finite() || self.gain <= 0.0 {
            return Err(DcanError::Config(format!("gain {} must be > 0", self.gain)));
        }
        for (l, w) in self.widths()?.iter().enumerate().skip(1) {
            if *w == 0 {
                return Err(DcanError::Config(format!(
                    "layer {l} width is zero; shrink width_step or layers"
                )));
            }
        }
        self.objective.validate()?;
        self.lbfgs
            .validate()
            .map_err(DcanError::Config)?;
        Ok(())
    }

    /// Widths from the PCA output inward. Without an override, each layer
    /// shrinks by `width_step`.
    pub fn widths(&self) -> Result<Vec<usize>> {
        if let Some(hidden) = &self.widths_override {
            if hidden.len() != self.num_layers {
                return Err(DcanError::Config(format!(
                    "width override has {} entries for {} layers",
                    hidden.len(),
                    self.num_layers
                )));
            }
            let mut w = vec![self.pca_dim];
            w.extend(hidden.iter().copied());
            return Ok(w);
        }
        let mut w = Vec::with_capacity(self.num_layers + 1);
        for l in 0..=self.num_layers {
            let shrink = l * self.width_step;
            if shrink >= self.pca_dim {
                return Err(DcanError::Config(format!(
                    "pca_dim {} minus {l} * width_step {} is not positive",
                    self.pca_dim, self.width_step
                )));
            }
            w.push(self.pca_dim - shrink);
        }
        Ok(w)
    }
}

/// Optimization summary for one trained layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub layer: usize,
    pub status: OptimStatus,
    pub initial_value: f64,
    pub final_value: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
    /// Pair counts the layer was trained with.
    pub n1: usize,
    pub n2: usize,
    pub k_clamped: bool,
    pub records: Vec<IterRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NetworkModel,
    pub layer_traces: Vec<LayerTrace>,
}

impl TrainOutcome {
    /// Layers whose optimizer stopped on a failed line search.
    pub fn warnings(&self) -> Vec<String> {
        self.layer_traces
            .iter()
            .filter(|t| t.status == OptimStatus::LineSearchFailed)
            .map(|t| {
                format!(
                    "layer {}: line search failed after {} iterations; kept last accepted iterate",
                    t.layer, t.iterations
                )
            })
            .collect()
    }
}

/// Train the stacked coupled network on the training split.
pub fn train(data: &ViewDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (tx, ty, labels) = data.subset(Split::Train);
    if tx.nrows() == 0 {
        return Err(DcanError::DegenerateData("empty training split".into()));
    }
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(DcanError::DegenerateData(format!(
            "training split has {} class(es); need at least 2",
            classes.len()
        )));
    }

    let pooled = ndarray::concatenate(Axis(0), &[tx.view(), ty.view()])
        .expect("pooled training rows");
    let pca = fit_pca(pooled.view(), cfg.pca_dim)?;
    let mut fx = pca.transform(tx.view())?;
    let mut fy = pca.transform(ty.view())?;
    let pooled_labels: Vec<usize> = labels.iter().chain(labels.iter()).copied().collect();

    let widths = cfg.widths()?;
    let mut layers = Vec::with_capacity(cfg.num_layers);
    let mut layer_traces = Vec::with_capacity(cfg.num_layers);

    for layer_idx in 0..cfg.num_layers {
        let d_in = widths[layer_idx];
        let hidden = widths[layer_idx + 1];

        // Pair sets over the pooled clean features of the current depth.
        let pooled_features = ndarray::concatenate(Axis(0), &[fx.view(), fy.view()])
            .expect("pooled features");
        let pairs = PairSets::build(pooled_features.view(), &pooled_labels, cfg.knn_k)?;

        let mut layer_cfg = cfg.objective.clone();
        layer_cfg.corruption.seed = derive_seed(cfg.objective.corruption.seed, layer_idx as u64);
        let objective = LayerObjective::new(fx.view(), fy.view(), &pairs, &layer_cfg, cfg.gain)?;

        let init = init_params(d_in, hidden, cfg.gain, derive_seed(cfg.seed, layer_idx as u64));
        let theta0 = init.to_flat();
        let mut records = Vec::new();
        let result = minimize_with_trace(
            |theta| objective.evaluate_flat(theta, hidden),
            &theta0,
            &cfg.lbfgs,
            Some(&mut records),
        );
        let initial_value = records.first().map_or(f64::NAN, |r| r.f);
        let params = LayerParams::from_flat(&result.solution, d_in, hidden, cfg.gain);

        fx = encode(&params, fx.view(), View::X)?;
        fy = encode(&params, fy.view(), View::Y)?;
        layers.push(params);
        layer_traces.push(LayerTrace {
            layer: layer_idx,
            status: result.status,
            initial_value,
            final_value: result.final_value,
            iterations: result.iterations,
            final_grad_norm: result.final_grad_norm,
            n1: pairs.n1(),
            n2: pairs.n2(),
            k_clamped: pairs.k_clamped,
            records,
        });
    }

    let model = NetworkModel {
        pca,
        layers,
        hyper: NetworkHyper {
            lambda: cfg.objective.lambda,
            gamma: cfg.objective.gamma,
            k: cfg.knn_k,
            gain: cfg.gain,
        },
    };
    Ok(TrainOutcome {
        model,
        layer_traces,
    })
}

/// PCA transform followed by the clean encoder stack of one view.
pub fn embed(model: &NetworkModel, samples: ArrayView2<'_, f64>, view: View) -> Result<Array2<f64>> {
    let mut features = model.pca.transform(samples)?;
    for params in &model.layers {
        features = encode(params, features.view(), view)?;
    }
    Ok(features)
}

// ---------------------------------------------------------------------------
// Model file format, version header "DCAN v1". Layer sections serialize in
// the field order gain, W_x, b_x, c_x, W_y, b_y, c_y with row-major decimal
// text matrices.

const MODEL_HEADER: &str = "DCAN v1";

impl NetworkModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::create(path).map_err(|e| DcanError::io(&display, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .map_err(|e| DcanError::io(&display, e))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{MODEL_HEADER}")?;
        writeln!(
            out,
            "hyper {} {} {} {}",
            self.hyper.lambda, self.hyper.gamma, self.hyper.k, self.hyper.gain
        )?;
        writeln!(
            out,
            "pca {} {}",
            self.pca.input_dim(),
            self.pca.output_dim()
        )?;
        write_vector(out, self.pca.mean.as_slice().unwrap())?;
        write_vector(out, self.pca.variances.as_slice().unwrap())?;
        writeln!(out, "{}", self.pca.scale)?;
        write_matrix(out, &self.pca.components)?;
        writeln!(out, "layers {}", self.layers.len())?;
        for layer in &self.layers {
            writeln!(out, "layer {} {}", layer.d_in(), layer.hidden())?;
            writeln!(out, "{}", layer.gain)?;
            write_matrix(out, &layer.w_x)?;
            write_vector(out, layer.b_x.as_slice().unwrap())?;
            write_vector(out, layer.c_x.as_slice().unwrap())?;
            write_matrix(out, &layer.w_y)?;
            write_vector(out, layer.b_y.as_slice().unwrap())?;
            write_vector(out, layer.c_y.as_slice().unwrap())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| DcanError::io(&display, e))?;
        Self::read_from(BufReader::new(file), &display)
    }

    pub fn read_from<R: BufRead>(reader: R, path: &str) -> Result<Self> {
        let mut lines = LineReader::new(reader, path);
        let header = lines.next_line()?;
        if header != MODEL_HEADER {
            return Err(lines.malformed(format!("expected header {MODEL_HEADER:?}")));
        }

        let hyper_line = lines.expect_tagged("hyper", 4)?;
        let hyper = NetworkHyper {
            lambda: lines.parse_field(&hyper_line[0])?,
            gamma: lines.parse_field(&hyper_line[1])?,
            k: lines.parse_field::<f64>(&hyper_line[2])? as usize,
            gain: lines.parse_field(&hyper_line[3])?,
        };

        let pca_dims = lines.expect_tagged("pca", 2)?;
        let d: usize = lines.parse_field(&pca_dims[0])?;
        let r: usize = lines.parse_field(&pca_dims[1])?;
        let mean = Array1::from_vec(lines.read_vector(d)?);
        let variances = Array1::from_vec(lines.read_vector(r)?);
        let scale_line = lines.next_line()?;
        let scale: f64 = lines.parse_field(&scale_line)?;
        if scale <= 0.0 {
            return Err(lines.malformed("pca scale must be positive".into()));
        }
        let components = lines.read_matrix(d, r)?;

        let layer_count = lines.expect_tagged("layers", 1)?;
        let count: usize = lines.parse_field(&layer_count[0])?;
        if count == 0 {
            return Err(lines.malformed("model needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(count);
        let mut expected_in = r;
        for _ in 0..count {
            let dims = lines.expect_tagged("layer", 2)?;
            let d_in: usize = lines.parse_field(&dims[0])?;
            let hidden: usize = lines.parse_field(&dims[1])?;
            if d_in != expected_in {
                return Err(lines.malformed(format!(
                    "layer input width {d_in} does not chain from previous width {expected_in}"
                )));
            }
            let gain_line = lines.next_line()?;
            let gain: f64 = lines.parse_field(&gain_line)?;
            let w_x = lines.read_matrix(hidden, d_in)?;
            let b_x = Array1::from_vec(lines.read_vector(hidden)?);
            let c_x = Array1::from_vec(lines.read_vector(d_in)?);
            let w_y = lines.read_matrix(hidden, d_in)?;
            let b_y = Array1::from_vec(lines.read_vector(hidden)?);
            let c_y = Array1::from_vec(lines.read_vector(d_in)?);
            layers.push(LayerParams {
                w_x,
                w_y,
                b_x,
                b_y,
                c_x,
                c_y,
                gain,
            });
            expected_in = hidden;
        }

        Ok(NetworkModel {
            pca: PcaModel {
                mean,
                components,
                variances,
                scale,
            },
            layers,
            hyper,
        })
    }
}

fn write_vector<W: Write>(out: &mut W, v: &[f64]) -> std::io::Result<()> {
    let mut first = true;
    for x in v {
        if !first {
            write!(out, " ")?;
        }
        write!(out, "{x}")?;
        first = false;
    }
    writeln!(out)
}

fn write_matrix<W: Write>(out: &mut W, m: &Array2<f64>) -> std::io::Result<()> {
    for row in m.rows() {
        write_vector(out, row.as_slice().expect("standard layout"))?;
    }
    Ok(())
}

struct LineReader<R: BufRead> {
    reader: R,
    path: String,
    line_no: usize,
}

impl<R: BufRead> LineReader<R> {
    fn new(reader: R, path: &str) -> Self {
        Self {
            reader,
            path: path.to_string(),
            line_no: 0,
        }
    }

    fn malformed(&self, message: String) -> DcanError {
        DcanError::ModelFormat {
            path: self.path.clone(),
            line: self.line_no,
            message,
        }
    }

    fn next_line(&mut self) -> Result<String> {
        let mut buf = String::new();
        loop {
            buf.clear();
            let read = self
                .reader
                .read_line(&mut buf)
                .map_err(|e| DcanError::io(&self.path, e))?;
            self.line_no += 1;
            if read == 0 {
                return Err(self.malformed("unexpected end of file".into()));
            }
            let t = buf.trim();
            if !t.is_empty() {
                return Ok(t.to_string());
            }
        }
    }

    fn parse_field<T: std::str::FromStr>(&self, field: &str) -> Result<T> {
        field
            .parse()
            .map_err(|_| self.malformed(format!("cannot parse {field:?}")))
    }

    fn expect_tagged(&mut self, tag: &str, fields: usize) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let parts: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if parts.len() != fields + 1 || parts[0] != tag {
            return Err(self.malformed(format!(
                "expected {tag:?} with {fields} fields, got {line:?}"
            )));
        }
        Ok(parts[1..].to_vec())
    }

    fn read_vector(&mut self, len: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|f| self.parse_field(f))
            .collect::<Result<_>>()?;
        if values.len() != len {
            return Err(self.malformed(format!("expected {len} values, got {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(self.malformed(format!("non-finite value {v}")));
        }
        Ok(values)
    }

    fn read_matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.read_vector(cols)?);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("validated row lengths"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;

    fn quick_cfg(pca_dim: usize, layers: usize, max_iters: usize) -> TrainConfig {
        TrainConfig {
            num_layers: layers,
            pca_dim,
            width_step: 3,
            lbfgs: LbfgsConfig {
                max_iters,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn width_schedule_from_depth() {
        let data = generate_synthetic(6, 4, 30, 5, 0.05).unwrap();
        let cfg = TrainConfig {
            num_layers: 1,
            pca_dim: 20,
            lbfgs: LbfgsConfig {
                max_iters: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let outcome = train(&data, &cfg).unwrap();
        assert_eq!(outcome.model.widths(), vec![20, 10]);
    }

    #[test]
    fn four_layer_schedule_drops_by_step() {
        let cfg = TrainConfig {
            num_layers: 4,
            pca_dim: 100,
            ..Default::default()
        };
        assert_eq!(cfg.widths().unwrap(), vec![100, 90, 80, 70, 60]);
    }

    #[test]
    fn width_override_and_bad_schedule() {
        let cfg = TrainConfig {
            num_layers: 2,
            pca_dim: 16,
            widths_override: Some(vec![12, 6]),
            ..Default::default()
        };
        assert_eq!(cfg.widths().unwrap(), vec![16, 12, 6]);

        let bad = TrainConfig {
            num_layers: 2,
            pca_dim: 15,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = generate_synthetic(6, 4, 20, 9, 0.05).unwrap();
        let cfg = quick_cfg(12, 2, 25);
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.model.write_to(&mut buf_a).unwrap();
        b.model.write_to(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn greedy_prefix_matches_shallower_training() {
        let data = generate_synthetic(6, 4, 20, 13, 0.05).unwrap();
        let one = train(&data, &quick_cfg(12, 1, 20)).unwrap();
        let two = train(&data, &quick_cfg(12, 2, 20)).unwrap();
        assert_eq!(one.model.layers[0], two.model.layers[0]);
        let mut a = Vec::new();
        let mut b = Vec::new();
        one.model.write_to(&mut a).unwrap();
        two.model.truncated(1).write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn layer_objective_never_increases() {
        let data = generate_synthetic(8, 4, 24, 3, 0.05).unwrap();
        let outcome = train(&data, &quick_cfg(14, 2, 40)).unwrap();
        for trace in &outcome.layer_traces {
            assert!(
                trace.final_value <= trace.initial_value + 1e-12,
                "layer {}: {} -> {}",
                trace.layer,
                trace.initial_value,
                trace.final_value
            );
            for w in trace.records.windows(2) {
                assert!(w[1].f <= w[0].f + 1e-12);
            }
        }
    }

    #[test]
    fn embedding_stays_in_tanh_range_and_is_pure() {
        let data = generate_synthetic(6, 4, 20, 31, 0.05).unwrap();
        let outcome = train(&data, &quick_cfg(12, 2, 15)).unwrap();
        let (tx, _, _) = data.subset(Split::Train);
        let e1 = embed(&outcome.model, tx.view(), View::X).unwrap();
        let e2 = embed(&outcome.model, tx.view(), View::X).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.ncols(), 6); // widths [12, 9, 6]
        assert!(e1.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let data = generate_synthetic(6, 4, 20, 17, 0.05).unwrap();
        let outcome = train(&data, &quick_cfg(12, 2, 10)).unwrap();
        let mut original = Vec::new();
        outcome.model.write_to(&mut original).unwrap();
        let loaded =
            NetworkModel::read_from(std::io::Cursor::new(&original), "buffer").unwrap();
        let mut rewritten = Vec::new();
        loaded.write_to(&mut rewritten).unwrap();
        assert_eq!(original, rewritten);
        assert_eq!(loaded.widths(), outcome.model.widths());
    }

    #[test]
    fn malformed_model_rejected_with_line() {
        let data = generate_synthetic(6, 4, 20, 19, 0.05).unwrap();
        let outcome = train(&data, &quick_cfg(12, 1, 5)).unwrap();
        let mut buf = Vec::new();
        outcome.model.write_to(&mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text = text.replacen("DCAN v1", "DCAN v9", 1);
        let err = NetworkModel::read_from(std::io::Cursor::new(text.as_bytes()), "buffer")
            .unwrap_err();
        assert!(matches!(err, DcanError::ModelFormat { line: 1, .. }));
    }

    #[test]
    fn rejects_single_class_training_split() {
        let data = generate_synthetic(2, 4, 20, 23, 0.05).unwrap();
        // With 2 classes, one lands in train and one in test; the training
        // split has a single class and must be rejected.
        let cfg = quick_cfg(8, 1, 5);
        assert!(matches!(
            train(&data, &cfg),
            Err(DcanError::DegenerateData(_))
        ));
    }
}
