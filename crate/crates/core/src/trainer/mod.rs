//! Composite objective, optimizer and the alternating training loop.

mod adam;
mod config;
mod data;
mod objective;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use config::{TrainConfig, PRESETS};
pub use data::{sample_batch, sample_sites, synthetic_image, Batch, CropSite, Dataset};
pub use objective::{
    batch_feature, batch_fourier, batch_l1, combine_terms, composite_generator_loss,
    discriminator_adversarial, generator_adversarial, CompositeLoss, Critics, GeneratorTerms,
    TermWeights,
};

use crate::error::{Error, Result};
use crate::losses::ConvFeatureExtractor;
use crate::nets::{
    layer_rng, Checkpoint, Checkpointable, FourierDiscriminator, FourierDiscriminatorConfig,
    Generator, Module, NetworkKind, NetworkRecord, SpatialDiscriminator,
    SpatialDiscriminatorConfig,
};
use crate::tensor::Image;

const GENERATOR_STREAM: u64 = 0x6765_6e00;
const SPATIAL_STREAM: u64 = 0x6473_7000;
const FOURIER_STREAM: u64 = 0x6466_7400;
const DATA_STREAM: u64 = 0x6461_7400;

/// Independent seed for one consumer of the run seed.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    layer_rng(seed, stream).gen()
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub generator: GeneratorTerms,
    pub generator_total: f64,
    pub d_spatial: Option<f64>,
    pub d_fourier: Option<f64>,
    /// Weighted discriminator objective; `None` without adversarial terms.
    pub discriminator_total: Option<f64>,
}

fn ensure_finite(value: f64, term: &str, iteration: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            iteration,
        })
    }
}

fn step_network(
    net: &mut dyn Module,
    state: &mut AdamState,
    lr: f64,
    what: &str,
    iteration: usize,
) -> Result<()> {
    let mut params = net.params_mut();
    adam_step(state, &mut params, lr).map_err(|e| match e {
        Error::NonFiniteGradient(tensor) => Error::NonFinite {
            term: format!("{what} gradient ({tensor})"),
            iteration,
        },
        other => other,
    })
}

/// Generator, discriminators and optimizer state of a run.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    generator: Generator,
    critics: Critics,
    extractor: ConvFeatureExtractor,
    g_opt: AdamState,
    spatial_opt: Option<AdamState>,
    fourier_opt: Option<AdamState>,
    rng: SplitMix64,
    iteration: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let generator = Generator::new(cfg.generator_config(), stream_seed(seed, GENERATOR_STREAM))?;
        let crop = cfg.hr_crop();
        let spatial = if cfg.enable_gan_spatial {
            Some(SpatialDiscriminator::new(
                SpatialDiscriminatorConfig::for_crop(cfg.channels, crop, crop),
                stream_seed(seed, SPATIAL_STREAM),
            )?)
        } else {
            None
        };
        let fourier = if cfg.enable_gan_fourier {
            Some(FourierDiscriminator::new(
                FourierDiscriminatorConfig::new(cfg.channels, crop, crop, cfg.fourier_disc_layers)?,
                stream_seed(seed, FOURIER_STREAM),
            )?)
        } else {
            None
        };
        let g_opt = AdamState::new(&generator.params());
        let spatial_opt = spatial.as_ref().map(|d| AdamState::new(&d.params()));
        let fourier_opt = fourier.as_ref().map(|d| AdamState::new(&d.params()));
        Ok(Self {
            extractor: ConvFeatureExtractor::new(cfg.channels, cfg.feature_seed),
            rng: SplitMix64::seed_from_u64(stream_seed(seed, DATA_STREAM)),
            cfg,
            generator,
            critics: Critics { spatial, fourier },
            g_opt,
            spatial_opt,
            fourier_opt,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Generator {
        &mut self.generator
    }

    pub fn critics(&self) -> &Critics {
        &self.critics
    }

    /// Completed main-phase iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.scale() != self.cfg.scale {
            return Err(Error::Config(format!(
                "dataset built for x{}, config asks for x{}",
                data.scale(),
                self.cfg.scale
            )));
        }
        if data.channels() != self.cfg.channels {
            return Err(Error::Config(format!(
                "dataset has {} channels, config asks for {}",
                data.channels(),
                self.cfg.channels
            )));
        }
        Ok(())
    }

    /// Generator warm-up on L1 alone with its own optimizer state. Returns
    /// the L1 value of each step.
    pub fn pretrain(&mut self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_dataset(data)?;
        let mut opt = AdamState::new(&self.generator.params());
        let mut history = Vec::with_capacity(self.cfg.pretrain_iters);
        for i in 0..self.cfg.pretrain_iters {
            let batch = sample_batch(&mut self.rng, data, self.cfg.crop_lr, self.cfg.batch)?;
            let pred = self.generator.forward(&batch.lr)?;
            let (l1, grads) = batch_l1(&pred, &batch.hr)?;
            ensure_finite(l1, "pretrain l1", i)?;
            self.generator.zero_grad();
            self.generator.backward(&grads)?;
            step_network(&mut self.generator, &mut opt, self.cfg.lr, "pretrain generator", i)?;
            history.push(l1);
        }
        Ok(history)
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self, data: &Dataset) -> Result<LogRow> {
        self.check_dataset(data)?;
        let it = self.iteration;
        let lr = self.cfg.lr;
        let batch = sample_batch(&mut self.rng, data, self.cfg.crop_lr, self.cfg.batch)?;
        let fake = self.generator.forward(&batch.lr)?;
        if !fake.iter().all(Image::is_finite) {
            return Err(Error::NonFinite {
                term: "generator output".into(),
                iteration: it,
            });
        }

        let (ws, wf) = TermWeights::discriminator(&self.cfg);
        let mut d_spatial = None;
        let mut d_fourier = None;
        if let (Some(d), Some(opt)) = (self.critics.spatial.as_mut(), self.spatial_opt.as_mut()) {
            d.zero_grad();
            let v = discriminator_adversarial(d, &batch.hr, &fake, ws)?;
            ensure_finite(v, "d_spatial", it)?;
            step_network(d, opt, lr, "spatial discriminator", it)?;
            d_spatial = Some(v);
        }
        if let (Some(d), Some(opt)) = (self.critics.fourier.as_mut(), self.fourier_opt.as_mut()) {
            d.zero_grad();
            let v = discriminator_adversarial(d, &batch.hr, &fake, wf)?;
            ensure_finite(v, "d_fourier", it)?;
            step_network(d, opt, lr, "Fourier discriminator", it)?;
            d_fourier = Some(v);
        }
        let discriminator_total = self
            .cfg
            .uses_gan()
            .then(|| ws * d_spatial.unwrap_or(0.0) + wf * d_fourier.unwrap_or(0.0));

        let loss = composite_generator_loss(
            &self.cfg,
            &fake,
            &batch.hr,
            &mut self.critics,
            &mut self.extractor,
        )?;
        for (name, v) in loss.terms.named() {
            ensure_finite(v, name, it)?;
        }
        ensure_finite(loss.total, "g_total", it)?;
        self.generator.zero_grad();
        self.generator.backward(&loss.gradients)?;
        step_network(&mut self.generator, &mut self.g_opt, lr, "generator", it)?;

        self.iteration += 1;
        Ok(LogRow {
            iteration: it,
            generator: loss.terms,
            generator_total: loss.total,
            d_spatial,
            d_fourier,
            discriminator_total,
        })
    }

    /// Networks and optimizer moments, in generator/spatial/Fourier order.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.cfg.seed);
        let mut g = self.generator.to_record();
        g.optimizer = Some(self.g_opt.to_record());
        ck.networks.push(g);
        if let (Some(d), Some(opt)) = (&self.critics.spatial, &self.spatial_opt) {
            let mut r = d.to_record();
            r.optimizer = Some(opt.to_record());
            ck.networks.push(r);
        }
        if let (Some(d), Some(opt)) = (&self.critics.fourier, &self.fourier_opt) {
            let mut r = d.to_record();
            r.optimizer = Some(opt.to_record());
            ck.networks.push(r);
        }
        ck
    }

    /// Replaces networks and optimizer state with those stored in `ck`.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        fn load<N: Checkpointable>(
            ck: &Checkpoint,
            net: &mut N,
            opt: &mut AdamState,
        ) -> Result<()> {
            let rec: &NetworkRecord = ck
                .network(N::KIND)
                .ok_or_else(|| Error::Config(format!("checkpoint has no {:?}", N::KIND)))?;
            if rec.config != net.config_block() {
                return Err(Error::Config(format!(
                    "checkpoint {:?} config {:?} does not match {:?}",
                    N::KIND,
                    rec.config,
                    net.config_block()
                )));
            }
            *net = N::from_record(rec, ck.seed)?;
            if let Some(o) = &rec.optimizer {
                *opt = AdamState::from_record(o);
            }
            Ok(())
        }
        load(ck, &mut self.generator, &mut self.g_opt)?;
        if let (Some(d), Some(o)) = (self.critics.spatial.as_mut(), self.spatial_opt.as_mut()) {
            load(ck, d, o)?;
        }
        if let (Some(d), Some(o)) = (self.critics.fourier.as_mut(), self.fourier_opt.as_mut()) {
            load(ck, d, o)?;
        }
        Ok(())
    }
}

/// Column names of the training log for `cfg`.
pub fn log_header(cfg: &TrainConfig) -> Vec<&'static str> {
    let mut cols = vec!["iter"];
    let names = ["l1", "fourier", "gan_spatial", "gan_fourier", "feature"];
    cols.extend(names.iter().zip(cfg.losses()).filter(|(_, on)| *on).map(|(n, _)| *n));
    cols.push("g_total");
    if cfg.enable_gan_spatial {
        cols.push("d_spatial");
    }
    if cfg.enable_gan_fourier {
        cols.push("d_fourier");
    }
    if cfg.uses_gan() {
        cols.push("d_total");
    }
    cols
}

impl LogRow {
    /// Tab-separated values matching [`log_header`].
    pub fn to_tsv(&self) -> String {
        let mut fields = vec![self.iteration.to_string()];
        fields.extend(self.generator.named().iter().map(|(_, v)| format!("{v:.9e}")));
        fields.push(format!("{:.9e}", self.generator_total));
        for v in [self.d_spatial, self.d_fourier, self.discriminator_total]
            .into_iter()
            .flatten()
        {
            fields.push(format!("{v:.9e}"));
        }
        fields.join("\t")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub pretrain_history: Vec<f64>,
    pub rows: Vec<LogRow>,
}

/// Pretraining, then `iters` alternating steps. When `log` is given, the
/// header and one row per iteration are written to it as they complete.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let io_err = |e| Error::io("training log", e);
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", log_header(cfg).join("\t")).map_err(io_err)?;
    }
    let pretrain_history = trainer.pretrain(data)?;
    let mut rows = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let row = trainer.step(data)?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", row.to_tsv()).map_err(io_err)?;
        }
        rows.push(row);
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        pretrain_history,
        rows,
    })
}

/// Rebuilds the generator stored in a checkpoint.
pub fn generator_from_checkpoint(ck: &Checkpoint) -> Result<Generator> {
    let rec = ck
        .network(NetworkKind::Generator)
        .ok_or_else(|| Error::Config("checkpoint has no generator".into()))?;
    Generator::from_record(rec, ck.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ScaleFactor;

    fn tiny(preset: usize) -> TrainConfig {
        let mut cfg = TrainConfig::preset(preset).unwrap();
        cfg.crop_lr = 4;
        cfg.batch = 2;
        cfg.iters = 3;
        cfg.pretrain_iters = 0;
        cfg.gen_channels = 4;
        cfg.gen_blocks = 1;
        cfg.fourier_disc_layers = 3;
        cfg.lr = 1e-3;
        cfg
    }

    fn toy_data(n: usize, side: usize) -> Dataset {
        let images = (0..n).map(|i| synthetic_image(side, side, 3, i as u64)).collect();
        Dataset::new(images, ScaleFactor::default()).unwrap()
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let mut cfg = tiny(8);
        cfg.iters = 0;
        let out = train(&cfg, &toy_data(1, 32), None).unwrap();
        assert_eq!(out.checkpoint, Trainer::new(cfg).unwrap().checkpoint());
    }

    #[test]
    fn log_has_header_and_one_row_per_iteration() {
        let cfg = tiny(8);
        let mut buf = Vec::new();
        train(&cfg, &toy_data(2, 32), Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), cfg.iters + 1);
        assert_eq!(
            lines[0],
            "iter\tl1\tfourier\tgan_spatial\tgan_fourier\tfeature\tg_total\td_spatial\td_fourier\td_total"
        );
        for (i, l) in lines[1..].iter().enumerate() {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 10);
            assert_eq!(f[0], i.to_string());
            assert!(f[1..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
        }
        assert_eq!(log_header(&tiny(1)), vec!["iter", "l1", "g_total"]);
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let data = toy_data(2, 32);
        let mut cfg = tiny(7);
        cfg.pretrain_iters = 2;
        let a = train(&cfg, &data, None).unwrap();
        let b = train(&cfg, &data, None).unwrap();
        assert_eq!(a.checkpoint.encode(), b.checkpoint.encode());
        assert_eq!(a.rows, b.rows);
        cfg.seed = 1;
        let c = train(&cfg, &data, None).unwrap();
        assert_ne!(a.checkpoint.encode(), c.checkpoint.encode());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let data = toy_data(2, 32);
        let cfg = tiny(8);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&cfg, &data, None).unwrap().checkpoint.encode())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn checkpoint_round_trip_restores_everything() {
        let data = toy_data(1, 32);
        let cfg = tiny(4);
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.step(&data).unwrap();
        let ck = Checkpoint::decode(&t.checkpoint().encode()).unwrap();
        assert_eq!(ck, t.checkpoint());
        let mut fresh = Trainer::new(cfg).unwrap();
        fresh.restore(&ck).unwrap();
        assert_eq!(fresh.checkpoint(), t.checkpoint());
        let g = generator_from_checkpoint(&ck).unwrap();
        let values = |g: &Generator| g.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(values(&g), values(t.generator()));
    }

    #[test]
    fn l1_only_regression_makes_progress() {
        let mut cfg = tiny(1);
        cfg.batch = 1;
        cfg.iters = 150;
        let data = toy_data(1, 16);
        let out = train(&cfg, &data, None).unwrap();
        let first = out.rows[0].generator.l1.unwrap();
        let last = out.rows.last().unwrap().generator.l1.unwrap();
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn non_finite_loss_names_iteration_and_term() {
        let cfg = tiny(1);
        let bad = Image::filled(16, 16, 3, f64::NAN);
        let data = Dataset::new(vec![bad], ScaleFactor::default()).unwrap();
        let err = train(&cfg, &data, None).unwrap_err();
        assert!(err.is_numeric());
        match err {
            Error::NonFinite { iteration, term } => {
                assert_eq!(iteration, 0);
                assert_eq!(term, "generator output");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let cfg = tiny(1);
        let data = Dataset::new(vec![synthetic_image(16, 16, 3, 0)], ScaleFactor::new(2).unwrap()).unwrap();
        assert!(matches!(train(&cfg, &data, None), Err(Error::Config(_))));
    }
}
