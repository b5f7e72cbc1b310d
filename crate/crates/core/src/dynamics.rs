//! Learned delta-state dynamics models and the replay dataset they train on.
//!
//! A model predicts `s' = s + denorm(net(norm(s, a)))`. Training minimizes the
//! one-step squared error in normalized target space with Adam and stops when
//! the validation loss has gone `patience` passes without a new minimum.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::numerics::rng::substream;
use crate::numerics::{load_params, save_params, Activation, AdamState, ForwardCache, Mlp};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension affine statistics for `(s, a)` inputs and `Δs` targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

fn mean_std(rows: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = rows.nrows() as f64;
    let mean: Vec<f64> = rows.sum_axis(Axis(0)).iter().map(|x| x / n).collect();
    let std = rows
        .axis_iter(Axis(1))
        .zip(&mean)
        .map(|(col, m)| {
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            var.sqrt().max(STD_FLOOR)
        })
        .collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Self {
            input_mean: vec![0.0; state_dim + action_dim],
            input_std: vec![1.0; state_dim + action_dim],
            output_mean: vec![0.0; state_dim],
            output_std: vec![1.0; state_dim],
        }
    }

    /// Population mean and std over the given transitions.
    pub fn fit(train: &[Transition]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (inputs, deltas) = raw_matrices(train)?;
        let (input_mean, input_std) = mean_std(&inputs);
        let (output_mean, output_std) = mean_std(&deltas);
        Ok(Self {
            input_mean,
            input_std,
            output_mean,
            output_std,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.output_mean.len()
    }

    pub fn normalize_inputs(&self, inputs: &mut Array2<f64>) {
        for mut row in inputs.rows_mut() {
            for ((x, m), s) in row.iter_mut().zip(&self.input_mean).zip(&self.input_std) {
                *x = (*x - m) / s;
            }
        }
    }

    pub fn normalize_targets(&self, deltas: &mut Array2<f64>) {
        for mut row in deltas.rows_mut() {
            for ((x, m), s) in row.iter_mut().zip(&self.output_mean).zip(&self.output_std) {
                *x = (*x - m) / s;
            }
        }
    }
}

/// `([s a], s' - s)` as row matrices.
fn raw_matrices(data: &[Transition]) -> Result<(Array2<f64>, Array2<f64>)> {
    let first = data.first().ok_or(Error::EmptyDataset)?;
    let (n, m) = (first.s.len(), first.a.len());
    let mut inputs = Array2::zeros((data.len(), n + m));
    let mut deltas = Array2::zeros((data.len(), n));
    for (i, t) in data.iter().enumerate() {
        check_dim("transition state", n, t.s.len())?;
        check_dim("transition action", m, t.a.len())?;
        check_dim("transition next state", n, t.s_next.len())?;
        for j in 0..n {
            inputs[[i, j]] = t.s[j];
            deltas[[i, j]] = t.s_next[j] - t.s[j];
        }
        for j in 0..m {
            inputs[[i, n + j]] = t.a[j];
        }
    }
    Ok((inputs, deltas))
}

fn normalized_matrices(data: &[Transition], norm: &Normalizer) -> Result<(Array2<f64>, Array2<f64>)> {
    let (mut x, mut y) = raw_matrices(data)?;
    norm.normalize_inputs(&mut x);
    norm.normalize_targets(&mut y);
    Ok((x, y))
}

/// Forward state kept for vector-Jacobian products through a prediction.
pub struct PredictionCache {
    net: ForwardCache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    net: Mlp,
    normalizer: Normalizer,
    seed: u64,
    train_calls: u64,
}

impl DynamicsModel {
    /// ReLU network with a zero-initialized output layer, so an untrained
    /// model predicts the mean training delta.
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(state_dim);
        let mut net = Mlp::new(&sizes, Activation::Relu, Activation::Identity, &mut substream(seed, "dynamics-init", 0))?;
        let last = net.num_layers() - 1;
        net.scale_layer(last, 0.0);
        Ok(Self {
            net,
            normalizer: Normalizer::identity(state_dim, action_dim),
            seed,
            train_calls: 0,
        })
    }

    pub fn from_parts(net: Mlp, normalizer: Normalizer, seed: u64) -> Result<Self> {
        check_dim("DynamicsModel input", normalizer.input_mean.len(), net.input_dim())?;
        check_dim("DynamicsModel output", normalizer.state_dim(), net.output_dim())?;
        Ok(Self {
            net,
            normalizer,
            seed,
            train_calls: 0,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<()> {
        check_dim("set_normalizer", self.normalizer.input_mean.len(), normalizer.input_mean.len())?;
        check_dim("set_normalizer", self.normalizer.state_dim(), normalizer.state_dim())?;
        self.normalizer = normalizer;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.input_dim() - self.net.output_dim()
    }

    fn inputs(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.state_dim();
        let mut x = Array2::zeros((states.nrows(), self.net.input_dim()));
        x.slice_mut(s![.., ..n]).assign(&states);
        x.slice_mut(s![.., n..]).assign(&actions);
        self.normalizer.normalize_inputs(&mut x);
        x
    }

    fn denormalize_into(&self, states: ArrayView2<'_, f64>, out: &mut Array2<f64>) {
        for (mut row, s) in out.rows_mut().into_iter().zip(states.rows()) {
            for j in 0..row.len() {
                row[j] = s[j] + row[j] * self.normalizer.output_std[j] + self.normalizer.output_mean[j];
            }
        }
    }

    /// Batched next-state prediction; rows of `states` pair with rows of
    /// `actions`. Non-finite rows are passed through for the caller to handle.
    pub fn predict_batch(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(states.ncols(), self.state_dim());
        assert_eq!(actions.ncols(), self.action_dim());
        let mut out = self.net.forward(self.inputs(states, actions).view());
        self.denormalize_into(states, &mut out);
        out
    }

    pub fn predict_batch_cached(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, PredictionCache) {
        let net = self.net.forward_cached(self.inputs(states, actions).view());
        let mut out = net.output().clone();
        self.denormalize_into(states, &mut out);
        (out, PredictionCache { net })
    }

    /// Pulls `upstream = ∂L/∂s'` back to `(∂L/∂s, ∂L/∂a)`.
    pub fn vjp(&self, cache: &PredictionCache, upstream: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let n = self.state_dim();
        let mut scaled = upstream.to_owned();
        for mut row in scaled.rows_mut() {
            for (x, s) in row.iter_mut().zip(&self.normalizer.output_std) {
                *x *= s;
            }
        }
        let mut dx = self.net.backward_input(&cache.net, scaled.view());
        for mut row in dx.rows_mut() {
            for (x, s) in row.iter_mut().zip(&self.normalizer.input_std) {
                *x /= s;
            }
        }
        let ds = &dx.slice(s![.., ..n]) + &upstream;
        let da = dx.slice(s![.., n..]).to_owned();
        (ds, da)
    }

    /// Signs of every hidden preactivation for each row; two inputs with the
    /// same pattern lie in the same linear region of the ReLU network.
    pub fn relu_pattern(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Vec<bool> {
        let cache = self.net.forward_cached(self.inputs(states, actions).view());
        let acts = cache.activations();
        let hidden = &acts[1..acts.len() - 1];
        hidden.iter().flat_map(|a| a.iter().map(|x| *x > 0.0)).collect()
    }

    pub fn predict_next(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_dim("predict_next state", self.state_dim(), s.len())?;
        check_dim("predict_next action", self.action_dim(), a.len())?;
        let states = ArrayView2::from_shape((1, s.len()), s).unwrap();
        let actions = ArrayView2::from_shape((1, a.len()), a).unwrap();
        let out = self.predict_batch(states, actions).into_raw_vec_and_offset().0;
        check_finite("predict_next output", &out)?;
        Ok(out)
    }

    /// Mean squared one-step error in raw state units, per dimension.
    pub fn rmse(&self, data: &[Transition]) -> Result<f64> {
        let (x, _) = raw_matrices(data)?;
        let n = self.state_dim();
        let pred = self.predict_batch(x.slice(s![.., ..n]), x.slice(s![.., n..]));
        let mut sq = 0.0;
        for (row, t) in pred.rows().into_iter().zip(data) {
            sq += row.iter().zip(&t.s_next).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();
        }
        Ok((sq / (data.len() * n) as f64).sqrt())
    }

    /// Normalized-space loss `mean_i ‖ŷ_i − y_i‖²` under the current
    /// normalizer.
    pub fn normalized_loss(&self, data: &[Transition]) -> Result<f64> {
        let (x, y) = normalized_matrices(data, &self.normalizer)?;
        Ok(batch_loss(&self.net.forward(x.view()), &y))
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "dynamics_model",
            "layer_sizes": self.net.layer_sizes(),
            "hidden_activation": self.net.hidden_activation(),
            "output_activation": self.net.output_activation(),
            "normalizer": self.normalizer,
            "seed": self.seed,
            "train_calls": self.train_calls,
        });
        save_params(dir, name, self.net.params(), self.net.param_shapes(), meta)
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let (manifest, values) = load_params(dir, name)?;
        let meta = &manifest.metadata;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("{name}: missing `{k}`")));
        let sizes: Vec<usize> = serde_json::from_value(field("layer_sizes")?)?;
        let hidden: Activation = serde_json::from_value(field("hidden_activation")?)?;
        let output: Activation = serde_json::from_value(field("output_activation")?)?;
        let normalizer: Normalizer = serde_json::from_value(field("normalizer")?)?;
        let seed: u64 = serde_json::from_value(field("seed")?)?;
        let train_calls: u64 = serde_json::from_value(field("train_calls")?)?;
        let mut net = Mlp::zeros(&sizes, hidden, output)?;
        net.set_params(&values)?;
        let mut model = Self::from_parts(net, normalizer, seed)?;
        model.train_calls = train_calls;
        Ok(model)
    }
}

fn batch_loss(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let diff = pred - target;
    diff.iter().map(|d| d * d).sum::<f64>() / pred.nrows() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub check_every: usize,
    pub patience: usize,
    /// Hard cap on passes over the training split.
    pub max_passes: usize,
}

impl Default for ModelTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            learning_rate: 1e-3,
            batch_size: 1000,
            check_every: 5,
            patience: 25,
            max_passes: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    /// `(pass, validation loss)` at every check, including pass 0.
    pub history: Vec<(usize, f64)>,
    pub best_pass: usize,
    pub best_loss: f64,
    pub passes: usize,
    pub early_stopped: bool,
}

/// Refits the normalizer on the training split and trains `model` in place,
/// leaving it at its best validation checkpoint.
pub fn train_model(model: &mut DynamicsModel, data: &Dataset, cfg: &ModelTrainConfig) -> Result<TrainReport> {
    if cfg.batch_size == 0 || cfg.check_every == 0 {
        return Err(Error::InvalidConfig("batch_size and check_every must be positive".into()));
    }
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::TooFewEpisodes(data.num_episodes()));
    }
    let normalizer = Normalizer::fit(&data.train)?;
    model.set_normalizer(normalizer)?;
    let (x_train, y_train) = normalized_matrices(&data.train, &model.normalizer)?;
    let (x_val, y_val) = normalized_matrices(&data.validation, &model.normalizer)?;

    let mut rng = substream(model.seed, "dynamics-minibatch", model.train_calls);
    model.train_calls += 1;
    let mut adam = AdamState::new(model.net.num_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..x_train.nrows()).collect();

    let validate = |net: &Mlp, pass: usize| -> Result<f64> {
        let loss = batch_loss(&net.forward(x_val.view()), &y_val);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "dynamics validation loss at pass {pass} (model seed {}, {} train / {} validation rows)",
                model.seed,
                x_train.nrows(),
                x_val.nrows()
            )));
        }
        Ok(loss)
    };

    let initial = validate(&model.net, 0)?;
    let mut history = vec![(0, initial)];
    let mut best = (0, initial, model.net.params().to_vec());
    let mut pass = 0;
    let mut early_stopped = false;
    while pass < cfg.max_passes {
        pass += 1;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(0), chunk);
            let yb = y_train.select(Axis(0), chunk);
            let cache = model.net.forward_cached(xb.view());
            let upstream = (cache.output() - &yb) * (2.0 / chunk.len() as f64);
            let mut grads = vec![0.0; model.net.num_params()];
            model.net.backward_accumulate(&cache, upstream.view(), &mut grads, false);
            adam.step(model.net.params_mut(), &grads).map_err(|_| {
                Error::NonFinite(format!("dynamics gradient at pass {pass} (model seed {})", model.seed))
            })?;
        }
        if pass % cfg.check_every == 0 {
            let loss = validate(&model.net, pass)?;
            history.push((pass, loss));
            if loss < best.1 {
                best = (pass, loss, model.net.params().to_vec());
            } else if pass - best.0 >= cfg.patience {
                early_stopped = true;
                break;
            }
        }
    }
    model.net.set_params(&best.2)?;
    Ok(TrainReport {
        history,
        best_pass: best.0,
        best_loss: best.1,
        passes: pass,
        early_stopped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelEnsemble {
    members: Vec<DynamicsModel>,
}

impl ModelEnsemble {
    /// Member `k` is seeded with `base_seed + k`.
    pub fn new(k: usize, state_dim: usize, action_dim: usize, hidden: &[usize], base_seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("ensemble size must be at least 1".into()));
        }
        let members = (0..k)
            .map(|i| DynamicsModel::new(state_dim, action_dim, hidden, base_seed.wrapping_add(i as u64)))
            .collect::<Result<_>>()?;
        Ok(Self { members })
    }

    pub fn from_members(members: Vec<DynamicsModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidConfig("ensemble size must be at least 1".into()));
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[DynamicsModel] {
        &self.members
    }

    pub fn member(&self, k: usize) -> &DynamicsModel {
        &self.members[k]
    }

    pub fn state_dim(&self) -> usize {
        self.members[0].state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.members[0].action_dim()
    }

    /// Trains every member on the same data, continuing from the current
    /// parameters.
    pub fn train(&mut self, data: &Dataset, cfg: &ModelTrainConfig) -> Result<Vec<TrainReport>> {
        self.members.iter_mut().map(|m| train_model(m, data, cfg)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (k, m) in self.members.iter().enumerate() {
            m.save(dir, &format!("model_{k}"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, k: usize) -> Result<Self> {
        Self::from_members((0..k).map(|i| DynamicsModel::load(dir, &format!("model_{i}"))).collect::<Result<_>>()?)
    }
}

/// Fresh ensemble of `k` members trained on `data`.
pub fn train_ensemble(
    k: usize,
    data: &Dataset,
    cfg: &ModelTrainConfig,
    base_seed: u64,
) -> Result<(ModelEnsemble, Vec<TrainReport>)> {
    let (n, m) = data.dims().ok_or(Error::EmptyDataset)?;
    let mut ensemble = ModelEnsemble::new(k, n, m, &cfg.hidden, base_seed)?;
    let reports = ensemble.train(data, cfg)?;
    Ok((ensemble, reports))
}

/// Real transitions split 2:1 into training and validation by whole episode.
/// Assignments persist as episodes are added.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Transition>,
    pub validation: Vec<Transition>,
    train_episodes: usize,
    validation_episodes: usize,
    train_initial: Vec<Vec<f64>>,
    validation_initial: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn from_splits(train: Vec<Transition>, validation: Vec<Transition>) -> Self {
        let train_initial: Vec<Vec<f64>> = train.first().map(|t| t.s.clone()).into_iter().collect();
        let validation_initial: Vec<Vec<f64>> = validation.first().map(|t| t.s.clone()).into_iter().collect();
        Self {
            train_episodes: train_initial.len(),
            validation_episodes: validation_initial.len(),
            train,
            validation,
            train_initial,
            validation_initial,
        }
    }

    pub fn num_episodes(&self) -> usize {
        self.train_episodes + self.validation_episodes
    }

    pub fn train_episodes(&self) -> usize {
        self.train_episodes
    }

    pub fn validation_episodes(&self) -> usize {
        self.validation_episodes
    }

    /// First state of every training episode.
    pub fn train_initial_states(&self) -> &[Vec<f64>] {
        &self.train_initial
    }

    pub fn validation_initial_states(&self) -> &[Vec<f64>] {
        &self.validation_initial
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.train.first().or(self.validation.first()).map(|t| (t.s.len(), t.a.len()))
    }

    /// Assigns new episodes so the running episode counts stay as close to
    /// 2:1 as whole episodes allow; existing assignments never move.
    pub fn add_episodes<R: Rng + ?Sized>(&mut self, mut episodes: Vec<Vec<Transition>>, rng: &mut R) {
        episodes.retain(|e| !e.is_empty());
        episodes.shuffle(rng);
        let total = self.num_episodes() + episodes.len();
        let target_train = (2 * total + 1) / 3;
        let to_train = target_train.saturating_sub(self.train_episodes).min(episodes.len());
        for (i, ep) in episodes.into_iter().enumerate() {
            if i < to_train {
                self.train_episodes += 1;
                self.train_initial.push(ep[0].s.clone());
                self.train.extend(ep);
            } else {
                self.validation_episodes += 1;
                self.validation_initial.push(ep[0].s.clone());
                self.validation.extend(ep);
            }
        }
    }

    /// Ready for model training: both splits nonempty.
    pub fn check_split(&self) -> Result<()> {
        if self.num_episodes() < 3 || self.train.is_empty() || self.validation.is_empty() {
            Err(Error::TooFewEpisodes(self.num_episodes()))
        } else {
            Ok(())
        }
    }
}

pub fn write_transitions_csv(path: &Path, data: &[Transition], state_dim: usize, action_dim: usize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..state_dim)
        .map(|i| format!("s_{i}"))
        .chain((0..action_dim).map(|i| format!("a_{i}")))
        .chain((0..state_dim).map(|i| format!("snext_{i}")))
        .collect();
    w.write_record(&header)?;
    for t in data {
        check_dim("transition csv state", state_dim, t.s.len())?;
        check_dim("transition csv action", action_dim, t.a.len())?;
        let row: Vec<String> = t.s.iter().chain(&t.a).chain(&t.s_next).map(|x| format!("{x:e}")).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transitions_csv(path: &Path) -> Result<Vec<Transition>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let n = header.iter().filter(|h| h.starts_with("s_")).count();
    let m = header.iter().filter(|h| h.starts_with("a_")).count();
    check_dim("transition csv columns", 2 * n + m, header.len())?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let vals = record
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(Transition {
            s: vals[..n].to_vec(),
            a: vals[n..n + m].to_vec(),
            s_next: vals[n + m..].to_vec(),
        });
    }
    Ok(out)
}
