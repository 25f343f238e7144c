use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::TrainConfig;
use crate::data::{motion_window, RasterStyle, SequenceDataset, SplitTag};
use crate::error::{Error, Result};
use crate::imaging::to_tensor;
use crate::losses::{gan_losses, generator_gan_loss, l1_loss, r1_penalty, PerceptualExtractor};
use crate::nn::{ModelBundle, NoiseMode, DISCRIMINATOR_SIDE, GENERATOR_SIDE};

/// Losses of one iteration, as written to `log.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub iter: u64,
    pub l1: f64,
    pub vgg: f64,
    pub g_gan: f64,
    pub d_gan: f64,
}

/// Training frames held as tensors: target images and the per-frame pose
/// signatures from which motion signatures are gathered.
#[derive(Clone, Debug)]
pub struct TrainData {
    images: Tensor,
    track: Tensor,
    indices: Vec<usize>,
    offsets: Vec<usize>,
    boundary: crate::data::BoundaryPolicy,
}

impl TrainData {
    /// Uses the train split when the sequence is tagged, every frame otherwise.
    pub fn new(seq: &SequenceDataset, cfg: &TrainConfig, style: &RasterStyle, dtype: DType) -> Result<Self> {
        if seq.is_empty() {
            return Err(Error::config("cannot train on an empty sequence"));
        }
        if (seq.width(), seq.height()) != (cfg.width, cfg.height) {
            return Err(Error::shape(format!(
                "dataset is {}x{}, config expects {}x{}",
                seq.width(),
                seq.height(),
                cfg.width,
                cfg.height
            )));
        }
        let dev = candle_core::Device::Cpu;
        let imgs: Vec<_> = seq.frames().iter().map(|f| &f.image).collect();
        let track = seq.pose_track(style)?;
        let sigs: Vec<_> = track.iter().map(|s| s.data()).collect();
        let indices = match seq.split() {
            Some(_) => seq.indices(SplitTag::Train),
            None => (0..seq.len()).collect(),
        };
        if indices.is_empty() {
            return Err(Error::config("the train split is empty"));
        }
        Ok(Self {
            images: to_tensor(&imgs, dtype, &dev)?,
            track: to_tensor(&sigs, dtype, &dev)?,
            indices,
            offsets: cfg.motion_offsets.clone(),
            boundary: cfg.boundary,
        })
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.images.dim(0).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pose signatures, motion signatures and target images of the given frames.
    pub fn batch(&self, frames: &[usize]) -> Result<(Tensor, Tensor, Tensor)> {
        let dev = self.images.device();
        let ids = Tensor::from_vec(frames.iter().map(|&i| i as u32).collect::<Vec<_>>(), frames.len(), dev)?;
        let p = self.track.index_select(&ids, 0)?;
        let img = self.images.index_select(&ids, 0)?;
        let m = if self.offsets.is_empty() {
            Tensor::zeros((frames.len(), 1, 1, 1), self.track.dtype(), dev)?
        } else {
            let mut win = Vec::with_capacity(frames.len() * self.offsets.len());
            for &i in frames {
                win.extend(motion_window(i, &self.offsets, self.len(), self.boundary, false)?.into_iter().map(|j| j as u32));
            }
            let n = win.len();
            let (_, c, h, w) = self.track.dims4()?;
            self.track
                .index_select(&Tensor::from_vec(win, n, dev)?, 0)?
                .reshape((frames.len(), c * self.offsets.len(), h, w))?
        };
        Ok((p, m, img))
    }
}

/// Mean L1 between generated (noise off) and target frames.
pub fn mean_l1(bundle: &ModelBundle, data: &TrainData, frames: &[usize], batch: usize) -> Result<f64> {
    let mut acc = 0.0;
    for chunk in frames.chunks(batch.max(1)) {
        let (p, m, img) = data.batch(chunk)?;
        let fake = bundle.forward_pipeline(&p, &m, NoiseMode::Zero)?;
        let l = l1_loss(&fake, &img)?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        acc += l * chunk.len() as f64;
    }
    Ok(acc / frames.len().max(1) as f64)
}

/// Outcome of a training run.
#[derive(Debug)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    /// Moving average of the generator-side weights, when enabled.
    pub ema: Option<ModelBundle>,
}

/// Alternating generator/discriminator optimization over one sequence.
pub struct Trainer<'a> {
    bundle: &'a mut ModelBundle,
    cfg: TrainConfig,
    data: TrainData,
    extractor: Option<PerceptualExtractor>,
    g_opt: AdamW,
    d_opt: AdamW,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    log: Vec<LogRow>,
    run_dir: Option<PathBuf>,
    ema: Option<ModelBundle>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn adam(vars: Vec<candle_core::Var>, cfg: &TrainConfig) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

impl<'a> Trainer<'a> {
    pub fn new(
        bundle: &'a mut ModelBundle,
        seq: &SequenceDataset,
        cfg: &TrainConfig,
        run_dir: Option<&Path>,
    ) -> Result<Self> {
        cfg.validate()?;
        if bundle.config() != &cfg.net_config() {
            return Err(Error::config("bundle architecture differs from the training config"));
        }
        let data = TrainData::new(seq, cfg, &RasterStyle::default(), bundle.dtype())?;
        let extractor = if cfg.vgg_weight > 0.0 {
            Some(match &cfg.perceptual_weights {
                Some(p) => PerceptualExtractor::import(Path::new(p), bundle.dtype())?,
                None => PerceptualExtractor::random(cfg.perceptual_seed, bundle.dtype())?,
            })
        } else {
            None
        };
        let g_opt = adam(bundle.params().vars_of(&GENERATOR_SIDE), cfg)?;
        let d_opt = adam(bundle.params().vars_of(&DISCRIMINATOR_SIDE), cfg)?;
        let ema = match cfg.ema_decay {
            Some(_) => Some(bundle.duplicate()?),
            None => None,
        };
        if let Some(dir) = run_dir {
            fs::create_dir_all(dir.join("ckpt"))?;
            fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            bundle,
            cfg: cfg.clone(),
            data,
            extractor,
            g_opt,
            d_opt,
            order: Vec::new(),
            cursor: 0,
            log: Vec::new(),
            run_dir: run_dir.map(Path::to_path_buf),
            ema,
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        self.bundle
    }

    pub fn data(&self) -> &TrainData {
        &self.data
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        while out.len() < self.cfg.batch_size {
            if self.cursor == self.order.len() {
                self.order = self.data.indices.clone();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    fn abort(&self, reason: String) -> Error {
        if let Some(dir) = &self.run_dir {
            let path = dir.join("abort_snapshot.ckpt");
            if let Err(e) = self.bundle.save(&path) {
                log::error!("could not write abort snapshot: {e}");
            }
        }
        Error::Aborted {
            iteration: self.bundle.step() as usize,
            reason,
        }
    }

    /// One generator-side update followed by one discriminator update.
    pub fn step(&mut self) -> Result<LogRow> {
        let frames = self.next_batch();
        let (p, m, real) = self.data.batch(&frames)?;
        let step = self.bundle.step();
        let w = self.cfg.loss_weights();
        let noise = NoiseMode::Seeded(self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step);

        let fake = self.bundle.forward_pipeline(&p, &m, noise)?;
        let l1 = l1_loss(&fake, &real)?;
        let vgg = match &self.extractor {
            Some(ex) => Some(ex.loss(&fake, &real)?),
            None => None,
        };
        let g_gan = if w.gan > 0.0 {
            Some(generator_gan_loss(&self.bundle.discriminate(&fake)?)?)
        } else {
            None
        };
        let total = w.total_tensor(Some(&l1), vgg.as_ref(), g_gan.as_ref())?;
        let row_l1 = scalar(&l1)?;
        let row_vgg = vgg.as_ref().map(scalar).transpose()?.unwrap_or(0.0);
        let row_g = g_gan.as_ref().map(scalar).transpose()?.unwrap_or(0.0);
        if !scalar(&total)?.is_finite() {
            return Err(self.abort(format!("non-finite generator loss (l1 {row_l1}, vgg {row_vgg}, gan {row_g})")));
        }
        self.g_opt.backward_step(&total)?;

        let mut row_d = 0.0;
        if w.gan > 0.0 {
            let d_real = self.bundle.discriminate(&real)?;
            let d_fake = self.bundle.discriminate(&fake.detach())?;
            let (_, mut d_loss) = gan_losses(&d_real, &d_fake)?;
            row_d = scalar(&d_loss)?;
            let every = self.cfg.r1_interval;
            if every > 0 && self.cfg.r1_gamma > 0.0 && step % every as u64 == 0 {
                let (_, surrogate) = r1_penalty(self.bundle, &real, self.cfg.r1_gamma)?;
                d_loss = (d_loss + (surrogate * every as f64)?)?;
            }
            if !scalar(&d_loss)?.is_finite() {
                return Err(self.abort("non-finite discriminator loss".into()));
            }
            self.d_opt.backward_step(&d_loss)?;
        }

        if let (Some(ema), Some(decay)) = (&self.ema, self.cfg.ema_decay) {
            for (name, v) in self.bundle.params().iter() {
                if !GENERATOR_SIDE.contains(&name.split('/').next().unwrap_or("")) {
                    continue;
                }
                let cur = ema.params().get(name).expect("same architecture");
                let next = ((cur.as_tensor() * decay)? + (v.as_tensor() * (1.0 - decay))?)?;
                ema.params().set(name, &next)?;
            }
        }

        self.bundle.set_step(step + 1);
        let row = LogRow {
            iter: step,
            l1: row_l1,
            vgg: row_vgg,
            g_gan: row_g,
            d_gan: row_d,
        };
        self.log.push(row);
        let every = self.cfg.checkpoint_interval;
        if every > 0 && (step + 1) % every as u64 == 0 {
            self.checkpoint()?;
        }
        Ok(row)
    }

    pub fn run(&mut self, iterations: usize) -> Result<()> {
        for _ in 0..iterations {
            let row = self.step()?;
            if row.iter % 100 == 0 {
                log::info!(
                    "iter {} l1 {:.4} vgg {:.4} g {:.4} d {:.4}",
                    row.iter,
                    row.l1,
                    row.vgg,
                    row.g_gan,
                    row.d_gan
                );
            }
        }
        Ok(())
    }

    fn checkpoint(&self) -> Result<()> {
        let Some(dir) = &self.run_dir else { return Ok(()) };
        self.bundle
            .save(&dir.join("ckpt").join(format!("step_{:08}", self.bundle.step())))?;
        write_log(&dir.join("log.csv"), &self.log)
    }

    /// Writes the final checkpoint and log.
    pub fn finish(self) -> Result<TrainReport> {
        self.checkpoint()?;
        Ok(TrainReport {
            log: self.log,
            ema: self.ema,
        })
    }
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "iter,l1,vgg,g_gan,d_gan")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{}", r.iter, r.l1, r.vgg, r.g_gan, r.d_gan)?;
    }
    Ok(())
}

/// Runs `cfg.iterations` steps; with a run directory, writes `config.json`,
/// `log.csv` and `ckpt/step_%08d` files.
pub fn train(
    bundle: &mut ModelBundle,
    seq: &SequenceDataset,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainReport> {
    let mut t = Trainer::new(bundle, seq, cfg, run_dir)?;
    t.run(cfg.iterations)?;
    t.finish()
}
