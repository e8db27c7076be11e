//! Subcommand bodies. Each reads its config, writes artifacts under the output
//! directory and registers them for the provenance record.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cortexalign::design::run_designs;
use cortexalign::encoder::{encode_dataset, ScoreTensor};
use cortexalign::geometry::{
    id_per_run, l2_normalize_rows, two_nn_id, write_id_csv, IdRecord, PointCloud,
};
use cortexalign::groupstats::{
    layer_pair_fractions, lmm_crossed, model_compare, model_contrast_rows, significance_map,
    StatMap,
};
use cortexalign::io::{load_manifest, write_csv, write_matrix, Atlas, Dataset, Dtype};
use cortexalign::maps::{
    map_convergence, mask_layers, network_profile, overlap_categories, preferred_layer,
    OverlapCategory,
};
use cortexalign::simulate::{synth_dataset, synth_three_languages};
use cortexalign::surprisal::{
    aggregate_word_surprisal, layer_mean_surprisal, run_profile, surprisal_convergence,
    SurprisalTable, TokenTable,
};
use cortexalign::{Error, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::config::{self, *};
use crate::provenance::{io_err, write_record, OutputLock, LOCK_FILE};
use crate::svg::{heatmap, line_chart, Series};
use crate::Command;

pub struct Context {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub plots: bool,
}

/// Artifact paths written so far, for the provenance record.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn path(&mut self, rel: impl AsRef<Path>) -> PathBuf {
        let p = self.dir.join(rel);
        self.files.push(p.clone());
        p
    }

    fn mkdir(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        std::fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        Ok(p)
    }

    fn write(&mut self, rel: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        std::fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    }

    fn json(&mut self, rel: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("value serializes");
        s.push('\n');
        self.write(rel, s)
    }

    /// Registers every file below `rel`.
    fn register_dir(&mut self, rel: impl AsRef<Path>) -> Result<()> {
        let mut stack = vec![self.dir.join(rel)];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).map_err(|e| io_err(&d, e))? {
                let p = entry.map_err(|e| io_err(&d, e))?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.file_name().is_some_and(|n| n != LOCK_FILE) {
                    self.files.push(p);
                }
            }
        }
        Ok(())
    }
}

pub fn dispatch(cmd: Command, ctx: &Context) -> Result<()> {
    let _lock = OutputLock::acquire(&ctx.out)?;
    match cmd {
        Command::Simulate => stage(ctx, cmd, simulate),
        Command::Design => stage(ctx, cmd, design),
        Command::Encode => stage(ctx, cmd, encode),
        Command::GroupMap => stage(ctx, cmd, group_map),
        Command::LayerCompare => stage(ctx, cmd, layer_compare),
        Command::ModelCompare => stage(ctx, cmd, model_comparison),
        Command::Overlap => stage(ctx, cmd, overlap),
        Command::PreferredLayer => stage(ctx, cmd, preferred),
        Command::Networks => stage(ctx, cmd, networks),
        Command::Convergence => stage(ctx, cmd, convergence),
        Command::Id => stage(ctx, cmd, intrinsic_dimension),
        Command::Surprisal => stage(ctx, cmd, surprisal),
        Command::Report => stage(ctx, cmd, report),
    }
}

fn stage<T: StageConfig>(
    ctx: &Context,
    cmd: Command,
    body: fn(&T, &Context, &mut Outputs) -> Result<()>,
) -> Result<()> {
    let (cfg, effective) = config::load::<T>(ctx.config.as_deref(), ctx.seed)?;
    let mut out = Outputs {
        dir: ctx.out.clone(),
        files: Vec::new(),
    };
    body(&cfg, ctx, &mut out)?;
    write_record(&ctx.out, cmd.name(), &effective, cfg.seed(), &out.files)?;
    Ok(())
}

/// Requested layers, or all available ones; each must be present.
fn pick_layers(available: &[u32], requested: &Option<Vec<u32>>) -> Result<Vec<u32>> {
    match requested {
        None => Ok(available.to_vec()),
        Some(req) if req.is_empty() => Err(Error::Invalid("empty layer list".into())),
        Some(req) => {
            if let Some(l) = req.iter().find(|l| !available.contains(l)) {
                return Err(Error::Invalid(format!(
                    "layer {l} not available (have {available:?})"
                )));
            }
            Ok(req.clone())
        }
    }
}

/// Language names end up in file names.
fn file_tag(name: &str) -> Result<&str> {
    if !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        Ok(name)
    } else {
        Err(Error::Invalid(format!(
            "name {name:?} must be non-empty ASCII letters, digits, '-' or '_'"
        )))
    }
}

fn distinct_tags<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Vec<&'a str>> {
    let mut seen = Vec::new();
    for n in names {
        let n = file_tag(n)?;
        if seen.contains(&n) {
            return Err(Error::Invalid(format!("name {n:?} used twice")));
        }
        seen.push(n);
    }
    Ok(seen)
}

fn load_dataset(manifest: &Path) -> Result<Dataset> {
    Dataset::load(&load_manifest(manifest)?)
}

fn all_layers(n: usize) -> Vec<u32> {
    (1..=n as u32).collect()
}

fn same_rois(tensors: &[&ScoreTensor]) -> Result<()> {
    if tensors.windows(2).all(|w| w[0].rois == w[1].rois) {
        Ok(())
    } else {
        Err(Error::Dimension(
            "score tensors cover different ROIs".into(),
        ))
    }
}

fn mean_finite(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v
        .into_iter()
        .filter(|x| x.is_finite())
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn simulate(cfg: &SimulateConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    let sets = match &cfg.three_languages {
        Some(t) => synth_three_languages(
            &cfg.sim,
            &t.shared,
            [&t.private[0], &t.private[1], &t.private[2]],
        )?,
        None => vec![synth_dataset(&cfg.sim)?],
    };
    let mut truth = Vec::new();
    for (dataset, gt) in &sets {
        let tag = file_tag(&dataset.language)?;
        dataset.save(out.dir.join(tag))?;
        out.register_dir(tag)?;
        truth.push(json!({
            "language": dataset.language,
            "manifest": format!("{tag}/manifest.json"),
            "signal_rois": gt.signal_rois,
            "driving_layer": gt.driving_layer,
        }));
    }
    out.json("ground_truth.json", &truth)
}

fn design(cfg: &DesignConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    let ds = load_dataset(&cfg.manifest)?;
    let layers = pick_layers(&all_layers(ds.n_layers()), &cfg.layers)?;
    out.mkdir("design")?;
    let mut rows = Vec::new();
    for &layer in &layers {
        for d in run_designs(&ds, layer)? {
            let rel = format!("design/layer{layer:02}_run-{}.enc", d.run_id);
            write_matrix(&d.values, Dtype::F64, out.path(rel))?;
            rows.push([
                layer.to_string(),
                d.run_id.to_string(),
                d.values.nrows().to_string(),
                d.values.ncols().to_string(),
                ds.run_words(d.run_id).len().to_string(),
            ]);
        }
    }
    write_csv(
        out.path("design_summary.csv"),
        &["layer", "run", "n_tr", "n_features", "n_words"],
        rows,
    )
}

fn encode(cfg: &EncodeConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    let ds = load_dataset(&cfg.manifest)?;
    let layers = pick_layers(&all_layers(ds.n_layers()), &cfg.layers)?;
    let t = encode_dataset(&ds, &layers, &cfg.ridge)?;
    t.save(out.dir.join("scores"))?;
    out.register_dir("scores")?;
    t.write_csv(out.path("scores.csv"))?;

    let nb = t.n_bands();
    let mut header = vec!["subject".to_string(), "layer".into(), "roi_id".into()];
    header.extend(["run".into(), "r".into()]);
    if nb == 1 {
        header.push("alpha".into());
    } else {
        header.extend((1..=nb).map(|b| format!("alpha_{b}")));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (s, subj) in t.subjects.iter().enumerate() {
        for (l, layer) in t.layers.iter().enumerate() {
            for (r, roi) in t.rois.iter().enumerate() {
                for (f, run) in t.runs.iter().enumerate() {
                    let mut row = vec![
                        subj.clone(),
                        layer.to_string(),
                        roi.to_string(),
                        run.to_string(),
                        t.fold(s, l, r, f).to_string(),
                    ];
                    row.extend(t.fold_alphas(s, l, r, f).iter().map(|a| a.to_string()));
                    rows.push(row);
                }
            }
        }
    }
    write_csv(out.path("folds.csv"), &header, rows)
}

fn group_map(cfg: &GroupMapConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    validate_q(cfg.q)?;
    let t = ScoreTensor::load(&cfg.scores)?;
    let layers = pick_layers(&t.layers, &cfg.layers)?;
    let mut summary = Vec::new();
    for layer in layers {
        let m = significance_map(&t, layer, cfg.q)?;
        m.write_csv(out.path(format!("group_map_layer{layer:02}.csv")))?;
        m.write_descriptor(out.path(format!("group_map_layer{layer:02}.json")))?;
        summary.push(layer_summary(layer, &m));
    }
    write_csv(
        out.path("group_map_summary.csv"),
        &[
            "layer",
            "n_significant",
            "n_rois",
            "fraction_significant",
            "mean_score_significant",
        ],
        summary,
    )
}

fn layer_summary(layer: u32, m: &StatMap) -> [String; 5] {
    let n = m.n_significant();
    [
        layer.to_string(),
        n.to_string(),
        m.rois.len().to_string(),
        (n as f64 / m.rois.len() as f64).to_string(),
        mean_finite(m.masked()).to_string(),
    ]
}

fn layer_compare(cfg: &LayerCompareConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    validate_q(cfg.q)?;
    let t = ScoreTensor::load(&cfg.scores)?;
    let f = layer_pair_fractions(&t, cfg.q, &cfg.signflip)?;
    f.write_csv(out.path("layer_fractions.csv"))?;
    out.json(
        "layer_compare.json",
        &json!({
            "test": "sign-flip",
            "sidedness": "two-sided",
            "n_subjects": t.n_subjects(),
            "n_rois": t.n_rois(),
            "exact": t.n_subjects() <= cfg.signflip.exact_max_subjects,
            "n_permutations": cfg.signflip.n_perm,
            "seed": cfg.signflip.seed,
            "fdr_q": cfg.q,
            "layers": t.layers,
        }),
    )
}

fn model_comparison(cfg: &ModelCompareConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    validate_q(cfg.q)?;
    let a = ScoreTensor::load(&cfg.a.scores)?;
    let b = ScoreTensor::load(&cfg.b.scores)?;
    let m = model_compare(&a, cfg.a.layer, &b, cfg.b.layer, &cfg.signflip, cfg.q)?;
    m.write_csv(out.path("model_compare.csv"))?;
    m.write_descriptor(out.path("model_compare.json"))?;
    if cfg.lmm {
        let rows = model_contrast_rows(&a, cfg.a.layer, &b, cfg.b.layer)?;
        let fit = lmm_crossed(&rows)?;
        out.json(
            "lmm.json",
            &json!({
                "contrast": format!("{} - {}", cfg.a.name, cfg.b.name),
                "n_observations": rows.len(),
                "fit": fit,
            }),
        )?;
    }
    Ok(())
}

fn overlap(cfg: &OverlapConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    validate_q(cfg.q)?;
    let names = distinct_tags(cfg.languages.iter().map(|l| l.name.as_str()))?;
    let names: [&str; 3] = [names[0], names[1], names[2]];
    let ts = cfg
        .languages
        .iter()
        .map(|l| ScoreTensor::load(&l.scores))
        .collect::<Result<Vec<_>>>()?;
    same_rois(&[&ts[0], &ts[1], &ts[2]])?;
    let maps = ts
        .iter()
        .map(|t| significance_map(t, cfg.layer, cfg.q))
        .collect::<Result<Vec<_>>>()?;
    let o = overlap_categories([
        &maps[0].significant,
        &maps[1].significant,
        &maps[2].significant,
    ])?;
    o.write_csv(&ts[0].rois, &names, out.path("overlap.csv"))?;
    write_overlap_counts(&o.counts(), &names, out.path("overlap_counts.csv"))
}

fn write_overlap_counts(counts: &[usize; 8], names: &[&str; 3], path: PathBuf) -> Result<()> {
    write_csv(
        path,
        &["category", "figure_category", "count"],
        OverlapCategory::ALL.iter().map(|c| {
            [
                c.label(names),
                c.figure().label(names),
                counts[*c as usize].to_string(),
            ]
        }),
    )
}

/// Layers x ROIs group means restricted to `layers`.
fn layer_means(t: &ScoreTensor, layers: &[u32]) -> Result<DMatrix<f64>> {
    let all = t.group_means();
    let idx = layers
        .iter()
        .map(|&l| t.layer_index(l))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(layers.len(), t.n_rois(), |i, r| {
        all[(idx[i], r)]
    }))
}

fn significance_masks(t: &ScoreTensor, layers: &[u32], q: f64) -> Result<Vec<StatMap>> {
    layers.iter().map(|&l| significance_map(t, l, q)).collect()
}

fn preferred(cfg: &PreferredLayerConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    validate_q(cfg.q)?;
    let t = ScoreTensor::load(&cfg.scores)?;
    let layers = pick_layers(&t.layers, &cfg.layers)?;
    let means = layer_means(&t, &layers)?;
    preferred_layer(&means, &layers)?.write_csv(&t.rois, out.path("preferred_layer.csv"))?;
    let masks: Vec<Vec<bool>> = significance_masks(&t, &layers, cfg.q)?
        .into_iter()
        .map(|m| m.significant)
        .collect();
    preferred_layer(&mask_layers(&means, &masks)?, &layers)?
        .write_csv(&t.rois, out.path("preferred_layer_significant.csv"))
}

fn networks(cfg: &NetworksConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    let names = distinct_tags(cfg.languages.iter().map(|l| l.name.as_str()))?;
    if names.is_empty() {
        return Err(Error::Invalid("no languages given".into()));
    }
    let atlas = Atlas::load(&cfg.atlas)?;
    for (l, name) in cfg.languages.iter().zip(names) {
        let t = ScoreTensor::load(&l.scores)?;
        let layers = pick_layers(&t.layers, &cfg.layers)?;
        network_profile(name, &t, &atlas, &layers)?
            .write_csv(out.path(format!("networks_{name}.csv")))?;
    }
    Ok(())
}

fn convergence(cfg: &ConvergenceConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    validate_q(cfg.q)?;
    let names = distinct_tags(cfg.languages.iter().map(|l| l.name.as_str()))?;
    let names: [&str; 3] = [names[0], names[1], names[2]];
    let ts = cfg
        .languages
        .iter()
        .map(|l| ScoreTensor::load(&l.scores))
        .collect::<Result<Vec<_>>>()?;
    same_rois(&[&ts[0], &ts[1], &ts[2]])?;
    let layers = pick_layers(&ts[0].layers, &cfg.layers)?;
    let maps = ts
        .iter()
        .map(|t| {
            if cfg.significant_only {
                let masked: Vec<Vec<f64>> = significance_masks(t, &layers, cfg.q)?
                    .iter()
                    .map(StatMap::masked)
                    .collect();
                Ok(DMatrix::from_fn(layers.len(), t.n_rois(), |l, r| {
                    masked[l][r]
                }))
            } else {
                layer_means(t, &layers)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    map_convergence([&maps[0], &maps[1], &maps[2]], &layers)?
        .write_csv(&names, out.path("convergence.csv"))
}

fn intrinsic_dimension(cfg: &IdConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    if cfg.manifests.is_empty() {
        return Err(Error::Invalid("no manifests given".into()));
    }
    let mut records = Vec::new();
    for m in &cfg.manifests {
        let ds = load_dataset(m)?;
        let layers = pick_layers(&all_layers(ds.n_layers()), &cfg.layers)?;
        for layer in layers {
            let feats = &ds.features[layer as usize - 1];
            if feats.nrows() != ds.words.len() {
                return Err(Error::Dimension(format!(
                    "layer {layer} has {} rows for {} words",
                    feats.nrows(),
                    ds.words.len()
                )));
            }
            let mut pts = PointCloud::from_rows(feats)?;
            let mut runs: Vec<u32> = ds.words.iter().map(|w| w.run_id).collect();
            if cfg.normalize {
                let keep: Vec<usize> = (0..pts.len())
                    .filter(|&i| pts.point(i).iter().any(|&v| v != 0.0))
                    .collect();
                runs = keep.iter().map(|&i| runs[i]).collect();
                pts = l2_normalize_rows(&pts.select(&keep)).0;
            }
            let record = |run, estimate| IdRecord {
                language: ds.language.clone(),
                layer,
                run,
                estimate,
            };
            records.push(record(None, two_nn_id(&pts, cfg.max_n, cfg.seed)?));
            if cfg.per_run {
                for (run, est) in id_per_run(&pts, &runs, cfg.max_n, cfg.seed)? {
                    records.push(record(Some(run), est));
                }
            }
        }
    }
    write_id_csv(&records, out.path("id.csv"))
}

fn surprisal(cfg: &SurprisalConfig, _: &Context, out: &mut Outputs) -> Result<()> {
    let n = cfg.languages.len();
    if !(1..=3).contains(&n) {
        return Err(Error::Invalid(format!(
            "surprisal takes 1 to 3 languages, got {n}"
        )));
    }
    let names = distinct_tags(cfg.languages.iter().map(|l| l.name.as_str()))?;
    let mut tables: Vec<SurprisalTable> = Vec::new();
    let mut layer_rows = Vec::new();
    let mut run_rows = Vec::new();
    for (input, name) in cfg.languages.iter().zip(&names) {
        let words = aggregate_word_surprisal(&TokenTable::load(&input.matrix, &input.alignment)?)?;
        words.write_csv(out.path(format!("surprisal_words_{name}.csv")))?;
        for (l, m) in layer_mean_surprisal(&words)?.into_iter().enumerate() {
            layer_rows.push([name.to_string(), (l + 1).to_string(), m.to_string()]);
        }
        let p = run_profile(&words);
        for (i, run) in p.runs.iter().enumerate() {
            for l in 0..p.means.ncols() {
                run_rows.push([
                    name.to_string(),
                    run.to_string(),
                    (l + 1).to_string(),
                    p.means[(i, l)].to_string(),
                ]);
            }
        }
        tables.push(words);
    }
    write_csv(
        out.path("surprisal_layers.csv"),
        &["language", "layer", "mean_surprisal"],
        layer_rows,
    )?;
    write_csv(
        out.path("surprisal_runs.csv"),
        &["language", "run", "layer", "mean_surprisal"],
        run_rows,
    )?;
    if n == 3 {
        surprisal_convergence([&tables[0], &tables[1], &tables[2]])?.write_csv(
            &[names[0], names[1], names[2]],
            out.path("surprisal_convergence.csv"),
        )?;
    }
    Ok(())
}

/// Columns of a CSV file by header name.
struct Table {
    columns: BTreeMap<String, Vec<String>>,
    n_rows: usize,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let parse = |e: csv::Error| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut r = csv::Reader::from_path(path).map_err(parse)?;
        let headers: Vec<String> = r
            .headers()
            .map_err(parse)?
            .iter()
            .map(String::from)
            .collect();
        let mut columns: BTreeMap<String, Vec<String>> =
            headers.iter().map(|h| (h.clone(), Vec::new())).collect();
        let mut n_rows = 0;
        for rec in r.records() {
            let rec = rec.map_err(parse)?;
            for (h, v) in headers.iter().zip(rec.iter()) {
                columns.get_mut(h).expect("header").push(v.to_string());
            }
            n_rows += 1;
        }
        Ok(Table { columns, n_rows })
    }

    fn col(&self, name: &str, path: &Path) -> Result<&[String]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                message: format!("missing column {name:?}"),
            })
    }

    fn num(&self, name: &str, path: &Path) -> Result<Vec<f64>> {
        self.col(name, path)?
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("column {name:?}: {e}"),
                })
            })
            .collect()
    }
}

fn copy_input(out: &mut Outputs, src: &Path, rel: &str) -> Result<()> {
    let bytes = std::fs::read(src).map_err(|e| io_err(src, e))?;
    out.write(rel, bytes)
}

fn fmt3(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "n/a".into()
    }
}

fn fmt_p(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3e}")
    } else {
        "n/a".into()
    }
}

/// Index of the first maximum among finite values.
fn first_max(v: &[f64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, x)| x.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (i, &x)| match best {
            Some((_, b)) if b >= x => best,
            _ => Some((i, x)),
        })
        .map(|(i, _)| i)
}

fn report(cfg: &ReportConfig, ctx: &Context, out: &mut Outputs) -> Result<()> {
    validate_q(cfg.q)?;
    if cfg.languages.is_empty() {
        return Err(Error::Invalid("report needs at least one language".into()));
    }
    let names = distinct_tags(cfg.languages.iter().map(|l| l.name.as_str()))?;
    let ts = cfg
        .languages
        .iter()
        .map(|l| ScoreTensor::load(&l.scores))
        .collect::<Result<Vec<_>>>()?;
    let maps: Vec<Vec<StatMap>> = ts
        .iter()
        .map(|t| significance_masks(t, &t.layers, cfg.q))
        .collect::<Result<_>>()?;
    let mut md = String::from("# Analysis report\n\n");
    let _ = writeln!(
        md,
        "Significance: one-sided t test per ROI against zero, BH-FDR q = {}.\n",
        cfg.q
    );

    // fig2: per-layer maps
    let mut map_rows = Vec::new();
    let mut sig_rows = Vec::new();
    let mut curve_rows = Vec::new();
    let mut curves = Vec::new();
    md.push_str("## Layer-wise significant ROIs\n\n| language | layer | significant | mean r (significant) |\n|---|---|---|---|\n");
    for ((name, t), lmaps) in names.iter().zip(&ts).zip(&maps) {
        let mut points = Vec::new();
        for (layer, m) in t.layers.iter().zip(lmaps) {
            for i in 0..m.rois.len() {
                map_rows.push([
                    name.to_string(),
                    layer.to_string(),
                    m.rois[i].to_string(),
                    m.value[i].to_string(),
                    m.q[i].to_string(),
                    (m.significant[i] as u8).to_string(),
                ]);
            }
            let s = layer_summary(*layer, m);
            let mean_sig = mean_finite(m.masked());
            let _ = writeln!(
                md,
                "| {name} | {layer} | {}/{} | {} |",
                s[1],
                s[2],
                fmt3(mean_sig)
            );
            sig_rows.push(
                std::iter::once(name.to_string())
                    .chain(s.iter().cloned())
                    .collect::<Vec<_>>(),
            );
            curve_rows.push([
                name.to_string(),
                layer.to_string(),
                mean_sig.to_string(),
                m.n_significant().to_string(),
            ]);
            points.push((*layer as f64, mean_sig));
        }
        curves.push(Series {
            name: name.to_string(),
            points,
        });
    }
    write_csv(
        out.path("fig2_maps.csv"),
        &["language", "layer", "roi_id", "score", "q", "significant"],
        map_rows,
    )?;
    write_csv(
        out.path("fig2_summary.csv"),
        &[
            "language",
            "layer",
            "n_significant",
            "n_rois",
            "fraction_significant",
            "mean_score_significant",
        ],
        sig_rows,
    )?;

    // fig3: layer differences and preferred layers
    md.push_str("\n## Preferred layer\n\n| language | layer | ROIs preferring |\n|---|---|---|\n");
    let mut pref_rows = Vec::new();
    for (((name, t), lang), lmaps) in names.iter().zip(&ts).zip(&cfg.languages).zip(&maps) {
        if let Some(src) = &lang.layer_fractions {
            let rel = format!("fig3a_layer_fractions_{name}.csv");
            copy_input(out, src, &rel)?;
            if ctx.plots {
                let tab = Table::read(src)?;
                let labels: Vec<String> = tab.col("layer", src)?.to_vec();
                let cols = labels
                    .iter()
                    .map(|l| tab.num(l, src))
                    .collect::<Result<Vec<_>>>()?;
                let rows: Vec<Vec<f64>> = (0..tab.n_rows)
                    .map(|i| cols.iter().map(|c| c[i]).collect())
                    .collect();
                out.write(
                    format!("fig3a_layer_fractions_{name}.svg"),
                    heatmap(
                        &format!("{name}: fraction of ROIs differing between layers"),
                        &labels,
                        &rows,
                    ),
                )?;
            }
        }
        let means = t.group_means();
        let p = preferred_layer(&means, &t.layers)?;
        let masks: Vec<Vec<bool>> = lmaps.iter().map(|m| m.significant.clone()).collect();
        let ps = preferred_layer(&mask_layers(&means, &masks)?, &t.layers)?;
        for (i, roi) in t.rois.iter().enumerate() {
            let show = |b: Option<u32>| b.map(|v| v.to_string()).unwrap_or_default();
            pref_rows.push([
                name.to_string(),
                roi.to_string(),
                show(p.best[i]),
                show(ps.best[i]),
            ]);
        }
        for layer in &t.layers {
            let n = p.best.iter().filter(|b| **b == Some(*layer)).count();
            let _ = writeln!(md, "| {name} | {layer} | {n} |");
        }
    }
    write_csv(
        out.path("fig3b_preferred_layer.csv"),
        &[
            "language",
            "roi_id",
            "preferred_layer",
            "preferred_layer_significant",
        ],
        pref_rows,
    )?;

    // fig4: overlap and model comparison
    if ts.len() == 3 {
        same_rois(&[&ts[0], &ts[1], &ts[2]])?;
        let layer = match cfg.overlap_layer {
            Some(l) => l,
            None => {
                let totals: Vec<f64> = (0..ts[0].n_layers())
                    .map(|l| {
                        maps.iter()
                            .map(|lm| lm.get(l).map_or(0, StatMap::n_significant))
                            .sum::<usize>() as f64
                    })
                    .collect();
                ts[0].layers[first_max(&totals).unwrap_or(0)]
            }
        };
        let sig = ts
            .iter()
            .map(|t| significance_map(t, layer, cfg.q).map(|m| m.significant))
            .collect::<Result<Vec<_>>>()?;
        let o = overlap_categories([&sig[0], &sig[1], &sig[2]])?;
        let n3 = [names[0], names[1], names[2]];
        o.write_csv(&ts[0].rois, &n3, out.path("fig4a_overlap.csv"))?;
        write_overlap_counts(&o.counts(), &n3, out.path("fig4a_overlap_counts.csv"))?;
        let _ = writeln!(
            md,
            "\n## Cross-language overlap (layer {layer})\n\n| category | ROIs |\n|---|---|"
        );
        for c in OverlapCategory::ALL {
            let _ = writeln!(md, "| {} | {} |", c.label(&n3), o.count(c));
        }
    }
    if let Some(src) = &cfg.model_compare {
        copy_input(out, src, "fig4b_model_compare.csv")?;
        let tab = Table::read(src)?;
        let p = tab.num("p", src)?;
        let stat = tab.num("stat", src)?;
        let n_sig = tab
            .col("significant", src)?
            .iter()
            .filter(|s| *s == "1")
            .count();
        let (lo, hi) = p
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        let _ = writeln!(
            md,
            "\n## Model comparison\n\n{} ROIs, {} significant after FDR; mean difference {}; p from {} to {}.",
            tab.n_rows,
            n_sig,
            fmt3(mean_finite(stat)),
            fmt_p(lo),
            fmt_p(hi)
        );
    }

    // fig5: networks, layer curves, surprisal, ID
    if let Some(atlas) = &cfg.atlas {
        let atlas = Atlas::load(atlas)?;
        let mut rows = Vec::new();
        md.push_str("\n## Network profiles\n\n| language | network | ROIs | max mean r | at layer |\n|---|---|---|---|---|\n");
        for (name, t) in names.iter().zip(&ts) {
            let p = network_profile(name, t, &atlas, &t.layers)?;
            let mut series = Vec::new();
            for (i, net) in p.networks.iter().enumerate() {
                let vals: Vec<f64> = p.values.row(i).iter().copied().collect();
                for (j, layer) in p.layers.iter().enumerate() {
                    rows.push([
                        name.to_string(),
                        net.as_str().to_string(),
                        p.n_rois[i].to_string(),
                        layer.to_string(),
                        vals[j].to_string(),
                    ]);
                }
                let best = first_max(&vals);
                let _ = writeln!(
                    md,
                    "| {name} | {} | {} | {} | {} |",
                    net.as_str(),
                    p.n_rois[i],
                    best.map_or("n/a".into(), |b| fmt3(vals[b])),
                    best.map_or("n/a".into(), |b| p.layers[b].to_string()),
                );
                series.push(Series {
                    name: net.as_str().to_string(),
                    points: p.layers.iter().map(|&l| l as f64).zip(vals).collect(),
                });
            }
            if ctx.plots {
                out.write(
                    format!("fig5a_networks_{name}.svg"),
                    line_chart(
                        &format!("{name}: network mean brain score"),
                        "layer",
                        "mean r",
                        &series,
                    ),
                )?;
            }
        }
        write_csv(
            out.path("fig5a_networks.csv"),
            &["language", "network", "n_rois", "layer", "mean_score"],
            rows,
        )?;
    }
    write_csv(
        out.path("fig5c_layer_scores.csv"),
        &[
            "language",
            "layer",
            "mean_score_significant",
            "n_significant",
        ],
        curve_rows,
    )?;
    if ctx.plots {
        out.write(
            "fig5c_layer_scores.svg",
            line_chart(
                "Mean brain score over significant ROIs",
                "layer",
                "mean r",
                &curves,
            ),
        )?;
    }
    if let Some(src) = &cfg.surprisal {
        copy_input(out, src, "fig5d_surprisal.csv")?;
        let tab = Table::read(src)?;
        let series = grouped_series(
            tab.col("language", src)?,
            &tab.num("layer", src)?,
            &tab.num("mean_surprisal", src)?,
            None,
        );
        md.push_str("\n## Surprisal\n\n| language | first layer | last layer | drop into last layer |\n|---|---|---|---|\n");
        for s in &series {
            let v: Vec<f64> = s.points.iter().map(|p| p.1).collect();
            let n = v.len();
            let drop = if n >= 2 {
                v[n - 2] - v[n - 1]
            } else {
                f64::NAN
            };
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} |",
                s.name,
                fmt3(v[0]),
                fmt3(v[n - 1]),
                fmt3(drop)
            );
        }
        if ctx.plots {
            out.write(
                "fig5d_surprisal.svg",
                line_chart("Mean word surprisal", "layer", "nats", &series),
            )?;
        }
    }
    if let Some(src) = &cfg.id {
        copy_input(out, src, "fig5e_id.csv")?;
        let tab = Table::read(src)?;
        let pooled: Vec<bool> = tab.col("run", src)?.iter().map(String::is_empty).collect();
        let series = grouped_series(
            tab.col("language", src)?,
            &tab.num("layer", src)?,
            &tab.num("id", src)?,
            Some(&pooled),
        );
        md.push_str(
            "\n## Intrinsic dimension\n\n| language | peak ID | at layer |\n|---|---|---|\n",
        );
        for s in &series {
            let v: Vec<f64> = s.points.iter().map(|p| p.1).collect();
            if let Some(b) = first_max(&v) {
                let _ = writeln!(md, "| {} | {} | {} |", s.name, fmt3(v[b]), s.points[b].0);
            }
        }
        if ctx.plots {
            out.write(
                "fig5e_id.svg",
                line_chart("Two-NN intrinsic dimension", "layer", "ID", &series),
            )?;
        }
    }
    out.write("report.md", md)
}

/// One series per language in first-seen order, points in row order.
fn grouped_series(lang: &[String], x: &[f64], y: &[f64], keep: Option<&[bool]>) -> Vec<Series> {
    let mut series: Vec<Series> = Vec::new();
    for i in 0..lang.len() {
        if keep.is_some_and(|k| !k[i]) {
            continue;
        }
        match series.iter_mut().find(|s| s.name == lang[i]) {
            Some(s) => s.points.push((x[i], y[i])),
            None => series.push(Series {
                name: lang[i].clone(),
                points: vec![(x[i], y[i])],
            }),
        }
    }
    series
}
