use super::cache::{atomic_write, hash_parts, io_err, Cache};
use super::config::{ContentMode, FeatureSet, RandomWidths, RunConfig};
use super::manifest::Manifest;
use super::{PipelineError, Result, Stage};
use crate::classify::{cross_validate_with, fold_plan, write_report_csv, write_report_table, ClassificationReport};
use crate::cpdecomp::{
    cp_als, project_test, rank_clusters_report, read_loadings_csv, stack_images, write_cluster_csv, write_loadings_csv,
    CpModel, CpOptions,
};
use crate::features::{assemble_abcd, write_feature_csv, AbcdVector, ColorTable, FeatureRow};
use crate::imaging::io::{read_gray, read_rgb, to_dynamic};
use crate::imaging::{
    build_content_image, median_filter, remove_hair_with, resize_bilinear, shades_of_gray, HairParams, ImagePlane,
};
use crate::nst::{run_transfer, TransferSidecar};
use crate::segmentation::{build_mask_pyramid, clean_mask, otsu_threshold, BinaryMask, PoolingMode};
use crate::vggnet::{load_weights, VggNetwork, CANONICAL_WIDTHS, TINY_WIDTHS};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    /// Artifacts found in the cache and reused.
    pub hits: usize,
    pub computed: usize,
}

/// Where the images fed to CP come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum CpSource {
    Styled,
    Raw,
}

impl CpSource {
    fn name(self) -> &'static str {
        match self {
            CpSource::Styled => "styled",
            CpSource::Raw => "raw",
        }
    }
}

struct TransferJob {
    pre: String,
    seg: String,
    content: String,
    key: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    stages: Vec<Stage>,
    stats: &'a BTreeMap<Stage, StageStats>,
    images: usize,
    folds: usize,
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(v).expect("plain data serializes")
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Artifact { path: path.display().to_string(), detail: e.to_string() })
}

fn write_png(path: &Path, img: &ImagePlane) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    to_dynamic(img)
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| PipelineError::Artifact { path: path.display().to_string(), detail: e.to_string() })?;
    atomic_write(path, &buf.into_inner())
}

/// Runs `write` against a temporary sibling of `path`, then renames it.
fn write_via<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn rows_of(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Cached execution of the analysis stages over one manifest.
///
/// Every artifact lives at `<cache>/<stage>/<key>.<ext>` where the key hashes
/// the artifact's inputs. An artifact is reused when its file exists and none
/// of its inputs was recomputed during this run.
pub struct Pipeline {
    manifest: Manifest,
    config: RunConfig,
    cache: Cache,
    run_dir: PathBuf,
    selected: BTreeSet<Stage>,
    stats: BTreeMap<Stage, StageStats>,
    net: Option<VggNetwork>,
    net_fp: String,
    color: ColorTable,
    color_fp: String,
    pre_keys: HashMap<usize, String>,
    done: HashSet<String>,
    fresh: HashSet<String>,
    plan: Vec<(Vec<usize>, Vec<usize>)>,
}

impl Pipeline {
    /// Validates the manifest and config. The cache lives at
    /// `config.cache_dir`; run outputs go to `run_dir`.
    pub fn new(manifest: Manifest, config: RunConfig, run_dir: impl Into<PathBuf>) -> Result<Self> {
        manifest.validate()?;
        config.validate()?;
        let plan = fold_plan(&manifest.labels(), &config.cv)?;
        let net_fp = match &config.network.weights {
            Some(p) => hash_parts(&[b"weights", &std::fs::read(p).map_err(io_err(p))?]),
            None => {
                let widths = match config.network.random_widths {
                    RandomWidths::Tiny => TINY_WIDTHS,
                    RandomWidths::Canonical => CANONICAL_WIDTHS,
                };
                hash_parts(&[b"random", format!("{widths:?}").as_bytes(), &config.network.seed.to_le_bytes()])
            }
        };
        let color = match &config.color_table {
            Some(p) => ColorTable::load(p)?,
            None => ColorTable::default(),
        };
        let color_fp = hash_parts(&[&json_bytes(&color)]);
        if config.content_mode == ContentMode::Global {
            log::warn!("content image built from every manifest image; test folds leak into it");
        }
        Ok(Self {
            cache: Cache::new(&config.cache_dir),
            manifest,
            config,
            run_dir: run_dir.into(),
            selected: BTreeSet::new(),
            stats: Stage::ALL.iter().map(|&s| (s, StageStats::default())).collect(),
            net: None,
            net_fp,
            color,
            color_fp,
            pre_keys: HashMap::new(),
            done: HashSet::new(),
            fresh: HashSet::new(),
            plan,
        })
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn stats(&self) -> &BTreeMap<Stage, StageStats> {
        &self.stats
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    /// Runs the stages listed in the config.
    pub fn run(&mut self) -> Result<()> {
        let stages = self.config.stages.clone();
        self.execute(&stages)
    }

    /// Runs `stages` in pipeline order. Artifacts of unselected stages are
    /// read from the cache and must already exist.
    pub fn execute(&mut self, stages: &[Stage]) -> Result<()> {
        self.selected = stages.iter().copied().collect();
        atomic_write(&self.run_dir.join("config.resolved.json"), &json_bytes(&self.config))?;
        for stage in Stage::ALL {
            if self.selected.contains(&stage) {
                let start = Instant::now();
                self.drive(stage)?;
                log::info!("{} done in {:.1}s {:?}", stage.name(), start.elapsed().as_secs_f64(), self.stats[&stage]);
            }
        }
        let summary = Summary {
            stages: self.selected.iter().copied().collect(),
            stats: &self.stats,
            images: self.manifest.entries.len(),
            folds: self.plan.len(),
        };
        atomic_write(&self.run_dir.join("summary.json"), &json_bytes(&summary))
    }

    /// The merged classification report of every feature set, computing it
    /// when Classify is selected.
    pub fn classification(&mut self) -> Result<ClassificationReport> {
        let mut out = ClassificationReport { rows: Vec::new() };
        for (_, key) in self.classify_all()? {
            out = out.merge(read_json(&self.cache.path("classify", &key, "json"))?);
        }
        Ok(out)
    }

    fn drive(&mut self, stage: Stage) -> Result<()> {
        let n = self.manifest.entries.len();
        match stage {
            Stage::Preprocess => (0..n).try_for_each(|i| self.ensure_pre(i).map(drop)),
            Stage::Segment => (0..n).try_for_each(|i| self.ensure_seg(i).map(drop)),
            Stage::ContentImage if self.sources().contains(&CpSource::Styled) => self.content_keys().map(drop),
            Stage::Transfer if self.sources().contains(&CpSource::Styled) => self.drive_transfer(),
            Stage::Features if self.uses_abcd() => (0..n).try_for_each(|i| self.ensure_abcd(i).map(drop)),
            Stage::Decompose => {
                for source in self.sources() {
                    for rank in self.config.ranks.clone() {
                        for fold in 0..self.plan.len() {
                            self.ensure_cp(source, rank, fold)?;
                        }
                    }
                }
                Ok(())
            }
            Stage::Classify => self.classify_all().map(drop),
            Stage::Report => self.write_report(),
            _ => Ok(()),
        }
    }

    fn sources(&self) -> BTreeSet<CpSource> {
        self.config
            .feature_sets
            .iter()
            .filter_map(|s| match s {
                FeatureSet::Cp | FeatureSet::Both => Some(CpSource::Styled),
                FeatureSet::RawCp => Some(CpSource::Raw),
                FeatureSet::Abcd => None,
            })
            .collect()
    }

    fn uses_abcd(&self) -> bool {
        self.config.feature_sets.iter().any(|s| matches!(s, FeatureSet::Abcd | FeatureSet::Both))
    }

    /// Decides whether an artifact must be computed. Reused artifacts count
    /// as cache hits; a missing artifact of an unselected stage is an error.
    fn needs_compute(&mut self, stage: Stage, key: &str, paths: &[PathBuf], inputs: &[&str]) -> Result<bool> {
        let id = format!("{}/{key}", stage.name());
        if self.done.contains(&id) {
            return Ok(false);
        }
        let exists = paths.iter().all(|p| p.is_file());
        let stale = inputs.iter().any(|k| self.fresh.contains(*k));
        if exists && (!stale || !self.selected.contains(&stage)) {
            self.stats.get_mut(&stage).expect("every stage has stats").hits += 1;
            self.done.insert(id);
            return Ok(false);
        }
        if !self.selected.contains(&stage) {
            return Err(PipelineError::MissingArtifact { stage: stage.name(), detail: paths[0].display().to_string() });
        }
        Ok(true)
    }

    fn finish(&mut self, stage: Stage, key: &str) {
        self.done.insert(format!("{}/{key}", stage.name()));
        self.fresh.insert(key.to_string());
        self.stats.get_mut(&stage).expect("every stage has stats").computed += 1;
    }

    fn pre_paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (self.cache.path("preprocess", key, "filtered.png"), self.cache.path("preprocess", key, "png"))
    }

    /// Resized, median-filtered and hair-free image, plus its color-normalized copy.
    fn ensure_pre(&mut self, i: usize) -> Result<String> {
        let key = match self.pre_keys.get(&i) {
            Some(k) => k.clone(),
            None => {
                let src = &self.manifest.entries[i].path;
                let bytes = std::fs::read(src).map_err(io_err(src))?;
                let k = hash_parts(&[b"preprocess", &bytes, &json_bytes(&self.config.preprocess)]);
                self.pre_keys.insert(i, k.clone());
                k
            }
        };
        let (filtered, normalized) = self.pre_paths(&key);
        if self.needs_compute(Stage::Preprocess, &key, &[filtered.clone(), normalized.clone()], &[])? {
            let p = &self.config.preprocess;
            let mut img = resize_bilinear(&read_rgb(&self.manifest.entries[i].path)?, p.size, p.size)?;
            if p.median_k > 1 {
                img = median_filter(&img, p.median_k)?;
            }
            if p.hair_removal {
                img = remove_hair_with(&img, &HairParams { threshold: p.hair_threshold, ..HairParams::default() })?;
            }
            write_png(&filtered, &img)?;
            write_png(&normalized, &shades_of_gray(&img, p.sog_p)?)?;
            self.finish(Stage::Preprocess, &key);
        }
        Ok(key)
    }

    /// Lesion mask: the manifest mask when given, otherwise Otsu on the
    /// filtered image, cleaned either way.
    fn ensure_seg(&mut self, i: usize) -> Result<String> {
        let pre = self.ensure_pre(i)?;
        let mask_src = self.manifest.entries[i].mask.clone();
        let mask_bytes = match &mask_src {
            Some(m) => std::fs::read(m).map_err(io_err(m))?,
            None => b"otsu".to_vec(),
        };
        let key = hash_parts(&[b"segment", pre.as_bytes(), &mask_bytes]);
        let path = self.cache.path("segment", &key, "png");
        if self.needs_compute(Stage::Segment, &key, std::slice::from_ref(&path), &[&pre])? {
            let size = self.config.preprocess.size;
            let raw = match &mask_src {
                Some(m) => {
                    let g = resize_bilinear(&read_gray(m)?, size, size)?;
                    BinaryMask::from_fn(size, size, |y, x| g.get(y, x, 0) >= 0.5)
                }
                None => otsu_threshold(&read_rgb(&self.pre_paths(&pre).0)?.to_gray())?,
            };
            write_png(&path, &clean_mask(&raw)?.to_plane())?;
            self.finish(Stage::Segment, &key);
        }
        Ok(key)
    }

    /// Mean of the filtered images of `rows`.
    fn ensure_content(&mut self, rows: &[usize]) -> Result<String> {
        let pres = rows.iter().map(|&i| self.ensure_pre(i)).collect::<Result<Vec<_>>>()?;
        let mut parts: Vec<&[u8]> = vec![b"content-image"];
        parts.extend(pres.iter().map(|k| k.as_bytes()));
        let key = hash_parts(&parts);
        let path = self.cache.path("content-image", &key, "png");
        let inputs: Vec<&str> = pres.iter().map(String::as_str).collect();
        if self.needs_compute(Stage::ContentImage, &key, std::slice::from_ref(&path), &inputs)? {
            let imgs = pres.iter().map(|k| read_rgb(&self.pre_paths(k).0)).collect::<std::result::Result<Vec<_>, _>>()?;
            write_png(&path, &build_content_image(&imgs)?)?;
            self.finish(Stage::ContentImage, &key);
        }
        Ok(key)
    }

    fn content_rows(&self, fold: usize) -> Vec<usize> {
        match self.config.content_mode {
            ContentMode::PerFold => self.plan[fold].0.clone(),
            ContentMode::Global => (0..self.manifest.entries.len()).collect(),
        }
    }

    /// Content image key of each fold.
    fn content_keys(&mut self) -> Result<Vec<String>> {
        (0..self.plan.len()).map(|f| self.ensure_content(&self.content_rows(f))).collect()
    }

    fn transfer_job(&mut self, i: usize, content: &str) -> Result<TransferJob> {
        let pre = self.ensure_pre(i)?;
        let seg = self.ensure_seg(i)?;
        let key = hash_parts(&[
            b"transfer",
            pre.as_bytes(),
            seg.as_bytes(),
            content.as_bytes(),
            &json_bytes(&self.config.transfer),
            self.net_fp.as_bytes(),
        ]);
        Ok(TransferJob { pre, seg, content: content.to_string(), key })
    }

    fn transfer_paths(&self, key: &str) -> [PathBuf; 2] {
        [self.cache.path("transfer", key, "png"), self.cache.path("transfer", key, "json")]
    }

    fn transfer_pending(&mut self, job: &TransferJob) -> Result<bool> {
        let paths = self.transfer_paths(&job.key);
        self.needs_compute(Stage::Transfer, &job.key, &paths, &[&job.pre, &job.seg, &job.content])
    }

    fn load_net(&mut self) -> Result<()> {
        if self.net.is_none() {
            let n = &self.config.network;
            self.net = Some(match &n.weights {
                Some(p) => load_weights(p)?,
                None => match n.random_widths {
                    RandomWidths::Tiny => VggNetwork::tiny(n.seed),
                    RandomWidths::Canonical => VggNetwork::random(CANONICAL_WIDTHS, n.seed),
                },
            });
        }
        Ok(())
    }

    /// Guided transfer of the normalized image's lesion texture onto the content image.
    fn compute_transfer(&self, net: &VggNetwork, job: &TransferJob) -> Result<()> {
        let start = Instant::now();
        let style = read_rgb(&self.pre_paths(&job.pre).1)?;
        let content = read_rgb(&self.cache.path("content-image", &job.content, "png"))?;
        let mask = BinaryMask::read(&self.cache.path("segment", &job.seg, "png"))?;
        let cfg = &self.config.transfer;
        let pyramid = build_mask_pyramid(&mask, &cfg.style_layers, PoolingMode::Max)?;
        let result = run_transfer(&style, &content, &pyramid, net, cfg)?;
        let [png, json] = self.transfer_paths(&job.key);
        write_png(&png, &result.image)?;
        let sidecar = TransferSidecar::new(cfg, &result, start.elapsed().as_secs_f64());
        atomic_write(&json, &json_bytes(&sidecar))
    }

    fn ensure_transfer(&mut self, i: usize, content: &str) -> Result<String> {
        let job = self.transfer_job(i, content)?;
        if self.transfer_pending(&job)? {
            self.load_net()?;
            self.compute_transfer(self.net.as_ref().expect("net loaded"), &job)?;
            self.finish(Stage::Transfer, &job.key);
        }
        Ok(job.key)
    }

    /// Every image against every content image, pending jobs in parallel.
    fn drive_transfer(&mut self) -> Result<()> {
        let mut jobs = Vec::new();
        let mut seen = HashSet::new();
        for content in self.content_keys()? {
            for i in 0..self.manifest.entries.len() {
                let job = self.transfer_job(i, &content)?;
                if seen.insert(job.key.clone()) && self.transfer_pending(&job)? {
                    jobs.push(job);
                }
            }
        }
        if jobs.is_empty() {
            return Ok(());
        }
        log::info!("running {} transfers", jobs.len());
        self.load_net()?;
        let net = self.net.as_ref().expect("net loaded");
        jobs.par_iter().map(|j| self.compute_transfer(net, j)).collect::<Result<Vec<()>>>()?;
        for j in &jobs {
            self.finish(Stage::Transfer, &j.key);
        }
        Ok(())
    }

    /// ABCD vector of the color-normalized original image.
    fn ensure_abcd(&mut self, i: usize) -> Result<String> {
        let pre = self.ensure_pre(i)?;
        let seg = self.ensure_seg(i)?;
        let key = hash_parts(&[b"abcd", pre.as_bytes(), seg.as_bytes(), self.color_fp.as_bytes()]);
        let path = self.cache.path("features", &key, "json");
        if self.needs_compute(Stage::Features, &key, std::slice::from_ref(&path), &[&pre, &seg])? {
            let img = read_rgb(&self.pre_paths(&pre).1)?;
            let mask = BinaryMask::read(&self.cache.path("segment", &seg, "png"))?;
            atomic_write(&path, &json_bytes(&assemble_abcd(&img, &mask, &self.color)?.to_vec()))?;
            self.finish(Stage::Features, &key);
        }
        Ok(key)
    }

    /// Image keys and paths of `rows` as seen by CP in `fold`.
    fn cp_images(&mut self, source: CpSource, fold: usize, rows: &[usize]) -> Result<Vec<(String, PathBuf)>> {
        match source {
            CpSource::Raw => rows
                .iter()
                .map(|&i| {
                    let k = self.ensure_pre(i)?;
                    let p = self.pre_paths(&k).1;
                    Ok((k, p))
                })
                .collect(),
            CpSource::Styled => {
                let content = self.ensure_content(&self.content_rows(fold))?;
                rows.iter()
                    .map(|&i| {
                        let k = self.ensure_transfer(i, &content)?;
                        let p = self.transfer_paths(&k)[0].clone();
                        Ok((k, p))
                    })
                    .collect()
            }
        }
    }

    fn stack(&self, images: &[(String, PathBuf)], rows: &[usize]) -> Result<crate::cpdecomp::StackedTensor> {
        let imgs = images.iter().map(|(_, p)| read_rgb(p)).collect::<std::result::Result<Vec<_>, _>>()?;
        let ids = rows.iter().map(|&i| self.manifest.entries[i].id.clone()).collect();
        Ok(stack_images(&imgs, ids)?)
    }

    /// CP model fitted on the fold's training images and the projection of
    /// its test images; returns both keys.
    fn ensure_cp(&mut self, source: CpSource, rank: usize, fold: usize) -> Result<(String, String)> {
        let (train, test) = self.plan[fold].clone();
        let tr = self.cp_images(source, fold, &train)?;
        let te = self.cp_images(source, fold, &test)?;
        let cp = &self.config.cp;
        let opts = format!("{}|{}|{}|{}", cp.max_sweeps, cp.fit_tol, cp.restarts, cp.seed);
        let mut parts: Vec<&[u8]> = vec![b"cp", source.name().as_bytes(), opts.as_bytes()];
        let rank_bytes = (rank as u64).to_le_bytes();
        parts.push(&rank_bytes);
        parts.extend(tr.iter().map(|(k, _)| k.as_bytes()));
        let cp_key = hash_parts(&parts);
        let cp_path = self.cache.path("decompose", &cp_key, "cpm");
        let inputs: Vec<&str> = tr.iter().map(|(k, _)| k.as_str()).collect();
        if self.needs_compute(Stage::Decompose, &cp_key, std::slice::from_ref(&cp_path), &inputs)? {
            let x = self.stack(&tr, &train)?;
            let cp = &self.config.cp;
            let opts = CpOptions { rank, max_sweeps: cp.max_sweeps, fit_tol: cp.fit_tol, restarts: cp.restarts, seed: cp.seed };
            let model = cp_als(&x, &opts)?;
            log::debug!("{} rank {rank} fold {fold}: fit {:.4}", source.name(), model.fit());
            atomic_write(&cp_path, &model.to_bytes())?;
            self.finish(Stage::Decompose, &cp_key);
        }
        let mut parts: Vec<&[u8]> = vec![b"projection", cp_key.as_bytes()];
        parts.extend(te.iter().map(|(k, _)| k.as_bytes()));
        let proj_key = hash_parts(&parts);
        let proj_path = self.cache.path("decompose", &proj_key, "csv");
        let mut inputs: Vec<&str> = te.iter().map(|(k, _)| k.as_str()).collect();
        inputs.push(&cp_key);
        if self.needs_compute(Stage::Decompose, &proj_key, std::slice::from_ref(&proj_path), &inputs)? {
            let model = CpModel::load(&cp_path)?;
            let xt = self.stack(&te, &test)?;
            let loadings = project_test(&model, &xt)?;
            write_via(&proj_path, |tmp| Ok(write_loadings_csv(tmp, xt.ids(), &loadings)?))?;
            self.finish(Stage::Decompose, &proj_key);
        }
        Ok((cp_key, proj_key))
    }

    /// Feature-set label used in reports, e.g. `cp_r8`.
    fn set_label(set: FeatureSet, rank: Option<usize>) -> String {
        match rank {
            Some(r) => format!("{}_r{r}", set.name()),
            None => set.name().to_string(),
        }
    }

    fn classify_all(&mut self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for set in self.config.feature_sets.clone() {
            if set.uses_cp() {
                for rank in self.config.ranks.clone() {
                    out.push((Self::set_label(set, Some(rank)), self.ensure_classify(set, Some(rank))?));
                }
            } else {
                out.push((Self::set_label(set, None), self.ensure_classify(set, None)?));
            }
        }
        Ok(out)
    }

    /// Feature artifact keys of every fold, in fold order.
    fn fold_feature_keys(&mut self, set: FeatureSet, rank: Option<usize>) -> Result<Vec<Vec<String>>> {
        let n = self.manifest.entries.len();
        let abcd = if matches!(set, FeatureSet::Abcd | FeatureSet::Both) {
            (0..n).map(|i| self.ensure_abcd(i)).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut out = Vec::with_capacity(self.plan.len());
        for fold in 0..self.plan.len() {
            let mut keys = abcd.clone();
            if let Some(rank) = rank {
                let source = if set == FeatureSet::RawCp { CpSource::Raw } else { CpSource::Styled };
                let (c, p) = self.ensure_cp(source, rank, fold)?;
                keys.push(c);
                keys.push(p);
            }
            out.push(keys);
        }
        Ok(out)
    }

    fn load_fold_features(&self, set: FeatureSet, keys: &[String], fold: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (train, test) = &self.plan[fold];
        let n = self.manifest.entries.len();
        let abcd = if matches!(set, FeatureSet::Abcd | FeatureSet::Both) {
            let rows: Vec<Vec<f64>> =
                keys[..n].iter().map(|k| read_json(&self.cache.path("features", k, "json"))).collect::<Result<_>>()?;
            let m = DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]);
            Some((rows_of(&m, train), rows_of(&m, test)))
        } else {
            None
        };
        let cp = if set.uses_cp() {
            let k = keys.len();
            let model = CpModel::load(&self.cache.path("decompose", &keys[k - 2], "cpm"))?;
            let (_, proj) = read_loadings_csv(&self.cache.path("decompose", &keys[k - 1], "csv"))?;
            Some((model.a, proj))
        } else {
            None
        };
        Ok(match (abcd, cp) {
            (Some(a), Some(c)) => {
                let cat = |l: &DMatrix<f64>, r: &DMatrix<f64>| {
                    DMatrix::from_fn(l.nrows(), l.ncols() + r.ncols(), |i, j| if j < l.ncols() { l[(i, j)] } else { r[(i, j - l.ncols())] })
                };
                (cat(&a.0, &c.0), cat(&a.1, &c.1))
            }
            (Some(a), None) => a,
            (None, Some(c)) => c,
            (None, None) => unreachable!("every feature set has a block"),
        })
    }

    fn ensure_classify(&mut self, set: FeatureSet, rank: Option<usize>) -> Result<String> {
        let fold_keys = self.fold_feature_keys(set, rank)?;
        let label = Self::set_label(set, rank);
        let grid = json_bytes(&self.config.classifiers);
        let cv = json_bytes(&self.config.cv);
        let mut parts: Vec<&[u8]> = vec![b"classify", label.as_bytes(), &grid, &cv];
        parts.extend(fold_keys.iter().flatten().map(|k| k.as_bytes()));
        let key = hash_parts(&parts);
        let path = self.cache.path("classify", &key, "json");
        let inputs: Vec<&str> = fold_keys.iter().flatten().map(String::as_str).collect();
        if self.needs_compute(Stage::Classify, &key, std::slice::from_ref(&path), &inputs)? {
            let features = (0..self.plan.len())
                .map(|f| self.load_fold_features(set, &fold_keys[f], f))
                .collect::<Result<Vec<_>>>()?;
            let mut it = features.into_iter();
            let report = cross_validate_with(&self.manifest.labels(), &label, &self.config.classifiers, &self.config.cv, |_, _| {
                Ok(it.next().expect("one feature pair per fold"))
            })?;
            atomic_write(&path, &json_bytes(&report))?;
            self.finish(Stage::Classify, &key);
        }
        Ok(key)
    }

    /// Metric tables, the ABCD feature table, and loadings plus cluster
    /// rankings of the first fold's CP model per source and rank.
    fn write_report(&mut self) -> Result<()> {
        let dir = self.run_dir.clone();
        let report = self.classification()?;
        write_via(&dir.join("metrics.csv"), |tmp| Ok(write_report_csv(tmp, &report)?))?;
        atomic_write(&dir.join("report.txt"), write_report_table(&report).as_bytes())?;
        let labels = self.manifest.labels();
        if self.uses_abcd() {
            let mut rows = Vec::new();
            for (i, e) in self.manifest.entries.clone().iter().enumerate() {
                let key = self.ensure_abcd(i)?;
                let values: Vec<f64> = read_json(&self.cache.path("features", &key, "json"))?;
                rows.push(FeatureRow { image_id: e.id.clone(), label: e.label, values });
            }
            write_via(&dir.join("features_abcd.csv"), |tmp| Ok(write_feature_csv(tmp, &AbcdVector::columns(), &rows)?))?;
        }
        for source in self.sources() {
            for rank in self.config.ranks.clone() {
                let (cp_key, _) = self.ensure_cp(source, rank, 0)?;
                let model = CpModel::load(&self.cache.path("decompose", &cp_key, "cpm"))?;
                let train = &self.plan[0].0;
                let ids: Vec<String> = train.iter().map(|&i| self.manifest.entries[i].id.clone()).collect();
                let y: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
                let stem = format!("{}_r{rank}", source.name());
                write_via(&dir.join(format!("loadings_{stem}.csv")), |tmp| Ok(write_loadings_csv(tmp, &ids, &model.a)?))?;
                let clusters = rank_clusters_report(&model.a, &ids, &y, None, self.config.cp.top_k)?;
                write_via(&dir.join(format!("clusters_{stem}.csv")), |tmp| Ok(write_cluster_csv(tmp, &clusters)?))?;
            }
        }
        Ok(())
    }
}
