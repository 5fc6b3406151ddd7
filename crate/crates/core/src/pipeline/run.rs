//! The three stages: rewrite, scheme search, weight and bitwidth training.

use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DataSource, RunConfig};
use super::data::{generate_dataset, Dataset, DatasetSpec};
use super::model::{accuracy, Identity, Model, SiteQuantizer};
use super::report::{Checkpoint, EpochLog, RunReport, Selection, Stage};
use super::{derive_seed, stream};
use crate::error::{Error, Result};
use crate::qpl::{
    combined_bit_step, finalize_bits, precision_loss_on_tape, quantize_learnable_on_tape,
    ContinuousBits, LearnableBitwidth, PrecisionTarget,
};
use crate::qss::{
    hard_select, soft_quantize_on_tape, FinalSelection, GumbelNoise, SearchSpace,
    TemperatureSchedule, TraceRow,
};
use crate::schemes::{AlphaTable, QuantConfig, SchemeId};
use crate::tensor::{Tape, Tensor, Var};

/// Everything a stage needs, rebuilt deterministically from the config.
pub struct Prepared {
    pub cfg: RunConfig,
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub model: Model,
    pub table: AlphaTable,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let seed = cfg
        .seed
        .ok_or_else(|| Error::InvalidArgument("a seed is required".into()))?;
    let spec = match &cfg.dataset {
        DataSource::Blobs => DatasetSpec::Blobs {
            n: cfg.samples,
            dim: cfg.dim,
            separation: cfg.separation,
            seed: derive_seed(seed, stream::DATA, 0),
        },
        DataSource::Rings => DatasetSpec::Rings {
            n: cfg.samples,
            noise: cfg.noise,
            seed: derive_seed(seed, stream::DATA, 0),
        },
        DataSource::File(p) => DatasetSpec::File(p.clone()),
    };
    let data = generate_dataset(&spec)?;
    let model = Model::build(&cfg.model, cfg.exempt_first_last, seed)?;
    if data.dim() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "dataset vs model input",
            lhs: vec![data.len(), data.dim()],
            rhs: vec![model.input_dim()],
        });
    }
    let (train, test) = data.split(0.8, derive_seed(seed, stream::SPLIT, 0))?;
    let mut table = AlphaTable::reference();
    if let Some(p) = &cfg.alpha_table {
        table.merge(&AlphaTable::load(p)?);
    }
    Ok(Prepared {
        cfg: cfg.clone(),
        seed,
        train,
        test,
        model,
        table,
    })
}

fn batches(n: usize, batch: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn loss_value(tape: &Tape, v: Var, stage: &'static str, epoch: u32) -> Result<f32> {
    let l = tape.value(v).data()[0];
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::NonFiniteLoss { stage, epoch })
    }
}

/// A non-finite intermediate during training means the run diverged.
fn diverged(stage: &'static str, epoch: u32) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::NonFiniteLoss { stage, epoch },
        e => e,
    }
}

fn evaluate(model: &Model, data: &Dataset, q: &mut dyn SiteQuantizer) -> Result<f32> {
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, &data.features, &data.labels, q)?;
    Ok(accuracy(tape.value(f.logits), &data.labels))
}

/// Trains the unquantized model for `epochs` epochs and returns its test accuracy.
pub fn train_fp(p: &Prepared, epochs: u32) -> Result<f32> {
    let mut model = p.model.clone();
    for epoch in 1..=epochs {
        let seed = derive_seed(p.seed, stream::BASELINE, epoch as u64);
        for rows in batches(p.train.len(), p.cfg.batch_size, seed) {
            let b = p.train.subset(&rows)?;
            let mut tape = Tape::new();
            let f = model
                .forward(&mut tape, &b.features, &b.labels, &mut Identity)
                .map_err(diverged("baseline", epoch))?;
            loss_value(&tape, f.loss, "baseline", epoch)?;
            tape.backward(f.loss).map_err(diverged("baseline", epoch))?;
            model.absorb(&tape, &f)?;
            model.sgd_step(p.cfg.lr_weights);
        }
    }
    evaluate(&model, &p.test, &mut Identity)
}

struct SearchQuantizer<'a> {
    space: &'a SearchSpace,
    noise: &'a BTreeMap<String, GumbelNoise>,
    tau: f32,
    bound: BTreeMap<String, Var>,
}

impl SiteQuantizer for SearchQuantizer<'_> {
    fn quantize(&mut self, tape: &mut Tape, site: &str, x: Var) -> Result<Var> {
        let name = self
            .space
            .sites
            .get(site)
            .ok_or_else(|| Error::Runtime(format!("quantizer '{site}' has no search state")))?;
        let state = &self.space.states[name];
        let theta = *self
            .bound
            .entry(name.clone())
            .or_insert_with(|| state.theta.bind(tape));
        soft_quantize_on_tape(tape, x, state, theta, &self.noise[name], self.tau)
    }
}

/// Quantizers with a fixed scheme, some of them with a learned bitwidth.
struct TrainQuantizer<'a> {
    fixed: &'a BTreeMap<String, QuantConfig>,
    learned: &'a BTreeMap<String, LearnableBitwidth>,
    bound: BTreeMap<String, Var>,
}

impl TrainQuantizer<'_> {
    fn bit_var(&mut self, tape: &mut Tape, site: &str) -> Var {
        let lb = &self.learned[site];
        *self
            .bound
            .entry(site.to_string())
            .or_insert_with(|| lb.bits.bind(tape))
    }
}

impl SiteQuantizer for TrainQuantizer<'_> {
    fn quantize(&mut self, tape: &mut Tape, site: &str, x: Var) -> Result<Var> {
        if let Some(lb) = self.learned.get(site) {
            let (scheme, lambda) = (lb.scheme, lb.lambda);
            let b = self.bit_var(tape, site);
            return quantize_learnable_on_tape(tape, x, b, scheme, lambda);
        }
        let cfg = self
            .fixed
            .get(site)
            .ok_or_else(|| Error::Runtime(format!("quantizer '{site}' has no scheme")))?;
        cfg.quantize_on_tape(tape, x)
    }
}

fn candidates(p: &Prepared, schemes: &[SchemeId]) -> Vec<QuantConfig> {
    schemes
        .iter()
        .map(|&s| QuantConfig::with_table(s, p.cfg.search_bits, &p.table).with_lambda(p.cfg.lambda))
        .collect()
}

fn report_config(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output = None;
    c.to_text()
}

/// Stages 1 and 2: rewrite, search for Δ epochs, then select one scheme
/// per quantizer.
pub fn run_search(cfg: &RunConfig) -> Result<RunReport> {
    let p = prepare(cfg)?;
    let mut model = p.model.clone();
    let sites: Vec<(String, bool)> = model.sites.iter().map(|s| (s.id.clone(), s.is_weight)).collect();
    let mut space = SearchSpace::build(
        cfg.mode,
        &sites,
        &candidates(&p, &cfg.weight_candidates),
        &candidates(&p, &cfg.activation_candidates),
    )?;
    let schedule = TemperatureSchedule::new(cfg.tau0, cfg.qss_epochs, cfg.tau_power)?;

    let fp_test_accuracy = if cfg.fp_baseline {
        Some(train_fp(&p, cfg.qss_epochs + cfg.qpl_epochs)?)
    } else {
        None
    };

    let mut temperatures = Vec::new();
    let mut curves = Vec::new();
    let mut trace = Vec::new();
    for epoch in 1..=cfg.qss_epochs {
        let tau = schedule.at(epoch)?;
        temperatures.push(tau);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, stream::NOISE, epoch as u64));
        let noise: BTreeMap<String, GumbelNoise> = space
            .states
            .iter()
            .map(|(k, s)| (k.clone(), GumbelNoise::draw_with(&mut rng, s.len())))
            .collect();

        let mut total = 0.0f64;
        let order = batches(
            p.train.len(),
            cfg.batch_size,
            derive_seed(p.seed, stream::SHUFFLE, epoch as u64),
        );
        let steps = order.len();
        for rows in order {
            let b = p.train.subset(&rows)?;
            let mut tape = Tape::new();
            let mut q = SearchQuantizer {
                space: &space,
                noise: &noise,
                tau,
                bound: BTreeMap::new(),
            };
            let f = model
                .forward(&mut tape, &b.features, &b.labels, &mut q)
                .map_err(diverged("search", epoch))?;
            total += loss_value(&tape, f.loss, "search", epoch)? as f64;
            tape.backward(f.loss).map_err(diverged("search", epoch))?;
            let bound = std::mem::take(&mut q.bound);
            model.absorb(&tape, &f)?;
            model.sgd_step(cfg.lr_weights);
            for (name, var) in bound {
                let st = space.states.get_mut(&name).unwrap();
                st.theta.absorb(&tape, var)?;
                st.theta.sgd_step(cfg.lr_theta);
                st.theta.zero_grad();
            }
        }

        let zeros: BTreeMap<String, GumbelNoise> = space
            .states
            .iter()
            .map(|(k, s)| (k.clone(), GumbelNoise::zeros(s.len())))
            .collect();
        let acc = evaluate(
            &model,
            &p.test,
            &mut SearchQuantizer {
                space: &space,
                noise: &zeros,
                tau,
                bound: BTreeMap::new(),
            },
        )?;
        let train_loss = (total / steps.max(1) as f64) as f32;
        info!("search epoch {epoch}: tau {tau:.4}, loss {train_loss:.4}, test acc {acc:.4}");
        curves.push(EpochLog {
            stage: "search".into(),
            epoch,
            tau: Some(tau),
            train_loss,
            test_accuracy: acc,
        });
        for (name, st) in &space.states {
            for (scheme, prob) in st.schemes().into_iter().zip(st.selection_probabilities()) {
                trace.push(TraceRow {
                    epoch,
                    state: name.clone(),
                    scheme,
                    probability: prob,
                });
            }
        }
    }

    // Sampling the schemes; θ is frozen from here on.
    let mut select_rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, stream::SELECT, 0));
    let mut chosen: BTreeMap<String, usize> = BTreeMap::new();
    for (name, st) in &space.states {
        let theta = st.theta.value().data();
        let k = match cfg.final_selection {
            FinalSelection::Greedy => hard_select(theta, None),
            FinalSelection::Sampled => {
                let g = GumbelNoise::draw_with(&mut select_rng, st.len());
                hard_select(theta, Some(&g))
            }
        };
        chosen.insert(name.clone(), k);
    }
    let mut selections = Vec::new();
    let mut fixed = BTreeMap::new();
    for site in &model.sites {
        let name = &space.sites[&site.id];
        let st = &space.states[name];
        let k = chosen[name];
        let c = st.candidates()[k];
        debug!("{} -> {}", site.id, c.scheme);
        selections.push(Selection {
            quantizer: site.id.clone(),
            state: name.clone(),
            scheme: c.scheme,
            bits: c.bits,
            is_weight: site.is_weight,
            elements: site.elements,
            probability: st.selection_probabilities()[k],
        });
        fixed.insert(site.id.clone(), c);
    }
    let learned = BTreeMap::new();
    let search_test_accuracy = evaluate(
        &model,
        &p.test,
        &mut TrainQuantizer {
            fixed: &fixed,
            learned: &learned,
            bound: BTreeMap::new(),
        },
    )?;

    let checkpoint = Checkpoint {
        params: model
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.value().data().to_vec()))
            .collect(),
        theta: space
            .states
            .iter()
            .map(|(k, s)| (k.clone(), s.theta.value().data().to_vec()))
            .collect(),
    };
    Ok(RunReport {
        stage: Stage::Search,
        seed: p.seed,
        mode: cfg.mode,
        config: report_config(cfg),
        fp_test_accuracy,
        search_test_accuracy,
        test_accuracy: None,
        average_bits: None,
        wall_clock_secs: None,
        temperatures,
        selections,
        policy: None,
        curves,
        trace,
        checkpoint: Some(checkpoint),
    })
}

/// Stage 3: trains weights and bitwidths of the selected schemes, starting
/// from the search report's checkpoint.
pub fn run_train(search: &RunReport) -> Result<RunReport> {
    if search.stage != Stage::Search {
        return Err(Error::InvalidArgument("train needs a report from the search stage".into()));
    }
    let ckpt = search
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("search report has no checkpoint".into()))?;
    let cfg = RunConfig::from_text(&search.config, None)?;
    let p = prepare(&cfg)?;
    let mut model = p.model.clone();
    for (name, values) in &ckpt.params {
        let param = model.params.get_mut(name).ok_or_else(|| {
            Error::InvalidArgument(format!("checkpoint parameter '{name}' is not in the model"))
        })?;
        let t = Tensor::new(param.value().shape().to_vec(), values.clone())?;
        param.set_value(t)?;
    }

    let mut fixed = BTreeMap::new();
    let mut learned = BTreeMap::new();
    for s in &search.selections {
        if cfg.learn_bits && s.scheme.supports_learned_bits() {
            let mut lb = LearnableBitwidth::new(
                &s.quantizer,
                s.scheme,
                cfg.target_bits,
                s.elements,
                s.is_weight,
            )?;
            lb.lambda = cfg.lambda;
            learned.insert(s.quantizer.clone(), lb);
        } else {
            let c = QuantConfig::with_table(s.scheme, s.bits, &p.table).with_lambda(cfg.lambda);
            fixed.insert(s.quantizer.clone(), c);
        }
    }
    let target = PrecisionTarget {
        target: cfg.target_bits,
        weight: cfg.precision_weight,
    };

    let mut curves = search.curves.clone();
    for epoch in 1..=cfg.qpl_epochs {
        let order = batches(
            p.train.len(),
            cfg.batch_size,
            derive_seed(p.seed, stream::SHUFFLE, 10_000 + epoch as u64),
        );
        let steps = order.len();
        let mut total = 0.0f64;
        for rows in order {
            let b = p.train.subset(&rows)?;
            let mut tape = Tape::new();
            let mut q = TrainQuantizer {
                fixed: &fixed,
                learned: &learned,
                bound: BTreeMap::new(),
            };
            let f = model
                .forward(&mut tape, &b.features, &b.labels, &mut q)
                .map_err(diverged("train", epoch))?;
            total += loss_value(&tape, f.loss, "train", epoch)? as f64;
            let mut root = f.loss;
            if !learned.is_empty() {
                let mut entries = Vec::new();
                for s in &search.selections {
                    let var = if learned.contains_key(&s.quantizer) {
                        q.bit_var(&mut tape, &s.quantizer)
                    } else {
                        tape.leaf(Tensor::scalar(fixed[&s.quantizer].bits as f32))
                    };
                    entries.push((var, s.elements));
                }
                let lbar = precision_loss_on_tape(&mut tape, &entries, target)?;
                root = tape.add(f.loss, lbar)?;
            }
            tape.backward(root).map_err(diverged("train", epoch))?;
            model.absorb(&tape, &f)?;
            model.sgd_step(cfg.lr_weights);
            let bound = std::mem::take(&mut q.bound);
            for (site, var) in bound {
                learned.get_mut(&site).unwrap().bits.absorb(&tape, var)?;
            }
            let mut lbs: Vec<LearnableBitwidth> = std::mem::take(&mut learned).into_values().collect();
            combined_bit_step(&mut lbs, cfg.lr_bits);
            for mut lb in lbs {
                lb.bits.zero_grad();
                learned.insert(lb.id.clone(), lb);
            }
        }
        let acc = evaluate(
            &model,
            &p.test,
            &mut TrainQuantizer {
                fixed: &fixed,
                learned: &learned,
                bound: BTreeMap::new(),
            },
        )?;
        let train_loss = (total / steps.max(1) as f64) as f32;
        info!("train epoch {epoch}: loss {train_loss:.4}, test acc {acc:.4}");
        curves.push(EpochLog {
            stage: "train".into(),
            epoch,
            tau: None,
            train_loss,
            test_accuracy: acc,
        });
    }

    let continuous: Vec<ContinuousBits> = search
        .selections
        .iter()
        .map(|s| match learned.get(&s.quantizer) {
            Some(lb) => ContinuousBits::from(lb),
            None => ContinuousBits {
                id: s.quantizer.clone(),
                scheme: s.scheme,
                bits: fixed[&s.quantizer].bits as f32,
                elements: s.elements,
                is_weight: s.is_weight,
            },
        })
        .collect();
    let (policy, test_accuracy) = if continuous.is_empty() {
        (None, evaluate(&model, &p.test, &mut Identity)?)
    } else {
        let policy = finalize_bits(&continuous)?;
        for l in &policy.layers {
            if let Some(lb) = learned.get_mut(&l.id) {
                lb.set_value(l.bits as f32);
            }
        }
        let acc = evaluate(
            &model,
            &p.test,
            &mut TrainQuantizer {
                fixed: &fixed,
                learned: &learned,
                bound: BTreeMap::new(),
            },
        )?;
        (Some(policy), acc)
    };
    info!("final test accuracy {test_accuracy:.4}");

    Ok(RunReport {
        stage: Stage::Complete,
        test_accuracy: Some(test_accuracy),
        average_bits: policy.as_ref().map(|p| p.summary()),
        policy,
        curves,
        checkpoint: None,
        ..search.clone()
    })
}

/// All stages in order.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    let search = run_search(cfg)?;
    run_train(&search)
}
