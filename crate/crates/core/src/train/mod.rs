//! The joint optimization loop: splats trained with an L1/SSIM image loss,
//! the field trained with a per-ray color loss, coupled through field-supplied
//! splat colors, plus field-rendered virtual views.

pub mod config;
pub mod eval;
pub mod loss;
pub mod optim;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densify::{
    adaptive_density_control, harvest_points, random_splats, reset_opacity, DensifyStats, EditLog, HarvestReport,
};
use crate::field::checkpoint::save_field;
use crate::field::colors::{splat_colors, splat_colors_backward};
use crate::field::render::{field_loss_and_grad, Jitter, Ray, RayMarch};
use crate::field::FieldParams;
use crate::geometry::{Camera, SceneFrame, Splat, Vec3};
use crate::io::image::Image;
use crate::io::manifest::Dataset;
use crate::io::splatfile::save_splats;
use crate::io::FormatError;
use crate::raster::{self, project_all, render_projected, RasterConfig, SplatGradients};
use crate::warp::{make_virtual_view, VirtualView};
use config::TrainConfig;
use loss::{gaussian_loss, masked_gaussian_loss, psnr};
use optim::{save_optimizer, DenseAdam, OptimizerState, SplatAdam, SplatRates};

/// Opacity cap applied by the periodic opacity reset.
pub const RESET_OPACITY: f64 = 0.01;

pub const SPLAT_FILE: &str = "splats.hogs";
pub const FIELD_FILE: &str = "field.hogf";
pub const OPTIM_FILE: &str = "optimizer.hogo";
pub const LOSS_FILE: &str = "loss.jsonl";

/// A posed image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub index: usize,
    pub camera: Camera,
    pub image: Image,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite loss or gradient at iteration {iteration}{}", dump.as_ref().map(|p| format!(" (dump in {})", p.display())).unwrap_or_default())]
    NonFinite { iteration: usize, dump: Option<PathBuf> },
}

/// Loads the train and test views of a dataset.
pub fn load_views(dataset: &Dataset) -> Result<(Vec<View>, Vec<View>), TrainError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for f in &dataset.frames {
        let image = Image::load(&f.image).map_err(|e| TrainError::Image {
            path: f.image.clone(),
            message: e.to_string(),
        })?;
        if (image.width, image.height) != (f.camera.width, f.camera.height) {
            return Err(TrainError::Image {
                path: f.image.clone(),
                message: format!(
                    "size {}x{} does not match the camera ({}x{})",
                    image.width, image.height, f.camera.width, f.camera.height
                ),
            });
        }
        let view = View {
            index: f.index,
            camera: f.camera.clone(),
            image,
        };
        if f.is_test() {
            test.push(view);
        } else {
            train.push(view);
        }
    }
    Ok((train, test))
}

/// One line of the loss stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub l_g: f64,
    pub l_mse: f64,
    /// Weighted virtual-view term, already included in `total`.
    pub l_virtual: f64,
    pub total: f64,
    pub splats: usize,
    /// PSNR of the training view rendered this step.
    pub psnr: Option<f64>,
}

/// Everything a diagnostic dump records about the failing step.
#[derive(Clone, Debug, Serialize)]
struct BatchDump {
    iteration: usize,
    view_index: Option<usize>,
    l_g: f64,
    l_mse: f64,
    l_virtual: f64,
    splats: usize,
    ray_origins: Vec<[f64; 3]>,
    ray_directions: Vec<[f64; 3]>,
    ray_targets: Vec<[f64; 3]>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub frame: SceneFrame,
    pub views: Vec<View>,
    pub splats: Vec<Splat>,
    pub field: FieldParams,
    pub splat_adam: SplatAdam,
    pub field_adam: DenseAdam,
    /// Completed iterations.
    pub iteration: usize,
    pub pool: Vec<VirtualView>,
    pub edits: Vec<EditLog>,
    pub harvests: Vec<(usize, HarvestReport)>,
    pub dump_dir: Option<PathBuf>,
    stats: DensifyStats,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    order_pos: usize,
    pool_created: Option<usize>,
    raster: RasterConfig,
}

impl Trainer {
    /// `initial` replaces the random initial splats when given.
    pub fn new(
        config: TrainConfig,
        frame: SceneFrame,
        views: Vec<View>,
        initial: Option<Vec<Splat>>,
    ) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        if views.is_empty() {
            return Err(TrainError::Config("no training views".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let field = FieldParams::new(config.field.clone(), frame, config.color_mode, config.seed);
        let splats = match initial {
            Some(s) => s,
            None => random_splats(config.initial_random_splats, &frame, config.initial_opacity, &mut rng),
        };
        Ok(Self {
            splat_adam: SplatAdam::new(splats.len()),
            field_adam: DenseAdam::new(field.weights.len()),
            stats: DensifyStats::new(splats.len()),
            order: (0..views.len()).collect(),
            order_pos: views.len(),
            config,
            frame,
            views,
            splats,
            field,
            iteration: 0,
            pool: Vec::new(),
            edits: Vec::new(),
            harvests: Vec::new(),
            dump_dir: None,
            rng,
            pool_created: None,
            raster: RasterConfig::default(),
        })
    }

    pub fn background(&self) -> Vec3 {
        Vec3::from(self.config.background)
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn in_warmup(&self) -> bool {
        self.iteration < self.config.warmup
    }

    pub fn optimizer_state(&self) -> OptimizerState {
        OptimizerState {
            splats: self.splat_adam.clone(),
            field: self.field_adam.clone(),
        }
    }

    /// Next training view, cycling through shuffled passes over all views.
    fn next_view(&mut self) -> usize {
        if self.order_pos >= self.order.len() {
            for i in (1..self.order.len()).rev() {
                let j = self.rng.random_range(0..=i);
                self.order.swap(i, j);
            }
            self.order_pos = 0;
        }
        self.order_pos += 1;
        self.order[self.order_pos - 1]
    }

    fn sample_rays(&mut self) -> (Vec<Ray>, Vec<Vec3>) {
        (0..self.config.rays_per_batch)
            .map(|_| {
                let v = &self.views[self.rng.random_range(0..self.views.len())];
                let x = self.rng.random_range(0..v.camera.width);
                let y = self.rng.random_range(0..v.camera.height);
                (Ray::through_pixel(&v.camera, x, y), v.image.get(x, y))
            })
            .unzip()
    }

    /// Re-renders one virtual view per rig camera from the current field.
    pub fn refresh_pool(&mut self) {
        let mut ids: Vec<&str> = Vec::new();
        for v in &self.views {
            if !ids.contains(&v.camera.camera_id.as_str()) {
                ids.push(&v.camera.camera_id);
            }
        }
        let ids: Vec<String> = ids.into_iter().map(String::from).collect();
        let wc = self.config.warping.clone();
        let march = RayMarch {
            samples: wc.samples,
            jitter: Jitter::Midpoint,
            transmittance_min: self.config.ray_transmittance_min,
            color_weight_min: 0.0,
        };
        let bg = self.background();
        let mut pool = Vec::new();
        for id in ids {
            let candidates: Vec<usize> = (0..self.views.len()).filter(|&i| self.views[i].camera.camera_id == id).collect();
            for _ in 0..wc.attempts.max(1) {
                let src = candidates[self.rng.random_range(0..candidates.len())];
                match make_virtual_view(&self.field, &self.views[src].camera, &mut self.rng, &wc, &march, &bg, self.iteration) {
                    Ok(v) => {
                        pool.push(v);
                        break;
                    }
                    Err(e) => log::debug!("virtual view for camera {id} rejected: {e}"),
                }
            }
        }
        self.pool = pool;
        self.pool_created = Some(self.iteration);
    }

    fn splat_rates(&self, iteration: usize) -> SplatRates {
        let lr = &self.config.lr;
        SplatRates {
            position: lr.position_at(iteration, self.config.iterations) * self.frame.radius,
            scale: lr.scale,
            rotation: lr.rotation,
            opacity: lr.opacity,
            base_color: lr.base_color,
        }
    }

    /// Renders `splats` at `camera`, applies `loss_fn` to the image and
    /// backpropagates into splat gradients and `field_grad`.
    fn splat_pass(
        &self,
        camera: &Camera,
        field_grad: &mut [f64],
        loss_fn: impl FnOnce(&Image) -> loss::ImageLoss,
    ) -> (loss::ImageLoss, Image, SplatGradients) {
        let bg = self.background();
        let projections = project_all(&self.splats, camera);
        let active: Vec<bool> = projections.iter().map(Result::is_ok).collect();
        let colors = splat_colors(&self.field, &self.splats, camera, Some(&active));
        let rendered = render_projected(&self.splats, projections, colors, camera, &bg, &self.raster);
        let image = Image::from_data(camera.width, camera.height, rendered.output.image.clone());
        let l = loss_fn(&image);
        let mut grads = raster::backward(&rendered, &self.splats, camera, &l.grad, &self.raster);
        splat_colors_backward(&self.field, &self.splats, camera, &mut grads, field_grad);
        (l, image, grads)
    }

    pub fn step(&mut self) -> Result<LossReport, TrainError> {
        let it = self.iteration + 1;
        let cfg = self.config.clone();
        let warm = it <= cfg.warmup;
        let train_splats = !warm && !self.splats.is_empty();
        let mut field_grad = vec![0.0; self.field.weights.len()];

        let (rays, targets) = if cfg.lambda1 > 0.0 { self.sample_rays() } else { (Vec::new(), Vec::new()) };
        let mut l_mse = 0.0;
        if !rays.is_empty() {
            let march = RayMarch {
                samples: cfg.ray_samples,
                jitter: Jitter::Seeded(self.rng.random()),
                transmittance_min: cfg.ray_transmittance_min,
                color_weight_min: cfg.ray_color_weight_min,
            };
            let mut g = vec![0.0; field_grad.len()];
            l_mse = field_loss_and_grad(&self.field, &rays, &targets, &march, &self.background(), &mut g);
            for (a, b) in field_grad.iter_mut().zip(&g) {
                *a += cfg.lambda1 * b;
            }
        }

        let mut l_g = 0.0;
        let mut l_virtual = 0.0;
        let mut psnr_value = None;
        let mut view_index = None;
        let mut grads = None;
        if train_splats {
            if cfg.warp && self.pool_created.is_none_or(|c| self.iteration - c >= cfg.warping.refresh_interval) {
                self.refresh_pool();
            }
            let vi = self.next_view();
            view_index = Some(self.views[vi].index);
            let camera = self.views[vi].camera.clone();
            let (l, image, mut g) =
                self.splat_pass(&camera, &mut field_grad, |img| gaussian_loss(img, &self.views[vi].image, cfg.lambda));
            self.stats.record(&g);
            l_g = l.loss;
            psnr_value = Some(psnr(&image, &self.views[vi].image));

            if cfg.warp && cfg.warping.every > 0 && it.is_multiple_of(cfg.warping.every) && !self.pool.is_empty() {
                let k = self.rng.random_range(0..self.pool.len());
                let view = self.pool[k].clone();
                let w = cfg.warping.weight;
                let (vl, _, vg) = self.splat_pass(&view.camera, &mut field_grad, |img| {
                    let mut l = masked_gaussian_loss(img, &view.target, &view.mask, cfg.lambda);
                    l.grad.iter_mut().for_each(|x| *x *= w);
                    l
                });
                l_virtual = w * vl.loss;
                g.accumulate(&vg);
            }
            grads = Some(g);
        }

        let total = l_g + l_virtual + cfg.lambda1 * l_mse;
        let finite = total.is_finite()
            && field_grad.iter().all(|g| g.is_finite())
            && grads.as_ref().is_none_or(SplatGradients::all_finite);
        if !finite {
            let dump = self.write_dump(&BatchDump {
                iteration: it,
                view_index,
                l_g,
                l_mse,
                l_virtual,
                splats: self.splats.len(),
                ray_origins: rays.iter().map(|r| r.origin.into()).collect(),
                ray_directions: rays.iter().map(|r| r.direction.into()).collect(),
                ray_targets: targets.iter().map(|&t| t.into()).collect(),
            });
            return Err(TrainError::NonFinite { iteration: it, dump });
        }

        if let Some(g) = &grads {
            let rates = self.splat_rates(it);
            self.splat_adam.update(&mut self.splats, g, &rates, &cfg.adam);
        }
        self.field_adam.update(&mut self.field.weights, &field_grad, cfg.lr.field, &cfg.adam);
        self.iteration = it;
        self.schedule(it, train_splats);
        assert_eq!(self.splat_adam.len(), self.splats.len(), "moment buffers out of sync with splats");
        assert_eq!(self.stats.len(), self.splats.len(), "densifier statistics out of sync with splats");

        Ok(LossReport {
            iteration: it,
            l_g,
            l_mse,
            l_virtual,
            total,
            splats: self.splats.len(),
            psnr: psnr_value,
        })
    }

    /// Densifier work after iteration `it`: clone/split/prune, opacity reset, harvest.
    fn schedule(&mut self, it: usize, trained_splats: bool) {
        let dc = self.config.densify.clone();
        if trained_splats && dc.densify_due(it) {
            let (log, origins) =
                adaptive_density_control(&mut self.splats, &self.stats, &dc, self.frame.radius, it, &mut self.rng);
            log::info!(
                "iteration {it}: cloned {} split {} pruned {} -> {} splats",
                log.cloned,
                log.split,
                log.pruned,
                log.after
            );
            self.splat_adam.remap(&origins);
            self.stats = DensifyStats::new(self.splats.len());
            self.edits.push(log);
        }
        if trained_splats && dc.opacity_reset_due(it) {
            reset_opacity(&mut self.splats, RESET_OPACITY);
            self.splat_adam.reset_opacity_moments();
        }
        if self.config.harvest && dc.harvest_due(it) {
            let budget = dc.max_splats.saturating_sub(self.splats.len());
            let cameras = self.cameras();
            let (new, report) = harvest_points(&self.field, &cameras, &self.frame, &dc, budget, &mut self.rng);
            log::info!(
                "iteration {it}: harvested {} splats from {} rays ({} hits, {} dense)",
                report.added,
                report.rays_cast,
                report.hits,
                report.passing
            );
            let n = new.len();
            self.splats.extend(new);
            self.splat_adam.extend_zeros(n);
            let mut stats = DensifyStats::new(self.splats.len());
            let old = self.stats.len();
            stats.grad_sum[..old].copy_from_slice(&self.stats.grad_sum);
            stats.hits[..old].copy_from_slice(&self.stats.hits);
            stats.position_grad[..old].copy_from_slice(&self.stats.position_grad);
            self.stats = stats;
            self.harvests.push((it, report));
        }
    }

    fn write_dump(&self, batch: &BatchDump) -> Option<PathBuf> {
        let root = self.dump_dir.as_ref()?;
        let dir = root.join(format!("nonfinite_{:06}", batch.iteration));
        let result = (|| -> Result<(), TrainError> {
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("batch.json"), serde_json::to_string_pretty(batch).expect("serializable"))?;
            save_splats(&self.splats, &dir.join(SPLAT_FILE))?;
            save_field(&self.field, &dir.join(FIELD_FILE))?;
            Ok(())
        })();
        match result {
            Ok(()) => Some(dir),
            Err(e) => {
                log::error!("failed to write diagnostic dump: {e}");
                None
            }
        }
    }

    /// Writes splats, field and optimizer state into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir)?;
        save_splats(&self.splats, &dir.join(SPLAT_FILE))?;
        save_field(&self.field, &dir.join(FIELD_FILE))?;
        save_optimizer(&self.optimizer_state(), &dir.join(OPTIM_FILE))?;
        Ok(())
    }
}

/// Trains for the configured number of iterations, streaming the loss to
/// `out/loss.jsonl`, writing periodic checkpoints under `out/checkpoints/`
/// and the final state into `out` itself.
pub fn run(trainer: &mut Trainer, out: &Path) -> Result<(), TrainError> {
    fs::create_dir_all(out)?;
    trainer.dump_dir.get_or_insert_with(|| out.to_path_buf());
    let mut stream = BufWriter::new(fs::File::create(out.join(LOSS_FILE))?);
    let total = trainer.config.iterations;
    let interval = trainer.config.checkpoint_interval;
    while trainer.iteration < total {
        let report = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                stream.flush()?;
                return Err(e);
            }
        };
        writeln!(stream, "{}", serde_json::to_string(&report).expect("serializable"))?;
        if report.iteration % 500 == 0 {
            log::info!(
                "iteration {}: total {:.5} l_g {:.5} l_mse {:.5} splats {}",
                report.iteration,
                report.total,
                report.l_g,
                report.l_mse,
                report.splats
            );
        }
        if interval > 0 && report.iteration % interval == 0 && report.iteration < total {
            trainer.save_checkpoint(&out.join("checkpoints").join(format!("{:06}", report.iteration)))?;
        }
    }
    stream.flush()?;
    trainer.save_checkpoint(out)
}

/// Loads the dataset views and builds a trainer for it.
pub fn trainer_for_dataset(
    config: TrainConfig,
    dataset: &Dataset,
    initial: Option<Vec<Splat>>,
) -> Result<(Trainer, Vec<View>), TrainError> {
    let (train, test) = load_views(dataset)?;
    let trainer = Trainer::new(config, dataset.scene_frame(), train, initial)?;
    Ok((trainer, test))
}
