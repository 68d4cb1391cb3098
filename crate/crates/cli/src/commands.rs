use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geomret::formats::{
    read_features, read_manifest, write_features, write_manifest, ManifestRecord,
};
use geomret::retrieval::{
    bench_pairs, sidecar_path, AlphaSetting, LabeledFeatures, SyntheticParams,
};
use geomret::{
    build_index, evaluate as eval_index, gen_synthetic as gen, load_index, rank, save_index,
};
use geomret::{BuildConfig, IndexMode, MetricKind};

use crate::output::c_exp;
use crate::{AlphaArg, BenchArgs, BuildArgs, EvaluateArgs, GenArgs, QueryArgs};

fn load_items(manifest: &Path) -> Result<Vec<LabeledFeatures>> {
    let records = read_manifest(manifest)
        .with_context(|| format!("reading manifest {}", manifest.display()))?;
    records
        .into_iter()
        .map(|r| {
            let features = read_features(&r.path)
                .with_context(|| format!("item `{}`: loading {}", r.item_id, r.path.display()))?;
            Ok(LabeledFeatures {
                item_id: r.item_id,
                category: r.category,
                features,
            })
        })
        .collect()
}

fn partial_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn remove_quietly(p: &Path) {
    let _ = fs::remove_file(p);
}

pub fn build(a: BuildArgs) -> Result<()> {
    let mode = if a.gmm {
        IndexMode::Gmm
    } else if a.smt {
        IndexMode::Smt
    } else {
        IndexMode::Sample
    };
    let mut cfg = BuildConfig {
        seed: a.seed,
        normalize_rows: a.normalize_rows,
        smt_order: a.smt_order,
        ..BuildConfig::default()
    };
    if let Some(k) = a.components {
        cfg.components = k as usize;
    }
    if let Some(AlphaArg::Fixed(alpha)) = a.alpha {
        cfg.alpha = AlphaSetting::Fixed { alpha };
    }

    let items = load_items(&a.manifest)?;
    if items.is_empty() {
        bail!("manifest {} lists no items", a.manifest.display());
    }
    let index = build_index(&items, mode, &cfg).context("building index")?;

    let mut stdout = io::stdout().lock();
    for (n, e) in index.entries().iter().enumerate() {
        write!(
            stdout,
            "[{}/{}] {}\t{}",
            n + 1,
            index.len(),
            e.item_id,
            e.category
        )?;
        if let Some(alpha) = index.config().selected_alpha.get(&e.item_id) {
            write!(stdout, "\talpha={alpha}")?;
        }
        writeln!(stdout)?;
    }

    // write beside the target and rename, so a failure never leaves a
    // half-written index under the requested name
    let tmp = partial_path(&a.out);
    let saved = save_index(&index, &tmp).and_then(|()| {
        fs::rename(sidecar_path(&tmp), sidecar_path(&a.out))?;
        fs::rename(&tmp, &a.out)?;
        Ok(())
    });
    if let Err(e) = saved {
        remove_quietly(&tmp);
        remove_quietly(&sidecar_path(&tmp));
        remove_quietly(&sidecar_path(&a.out));
        return Err(e).with_context(|| format!("writing {}", a.out.display()));
    }
    writeln!(
        stdout,
        "built {} entries, dim {}, mode {} -> {}",
        index.len(),
        index.dim(),
        index.mode(),
        a.out.display()
    )?;
    Ok(())
}

pub fn query(a: QueryArgs) -> Result<()> {
    let index =
        load_index(&a.index).with_context(|| format!("loading index {}", a.index.display()))?;
    let features =
        read_features(&a.features).with_context(|| format!("loading {}", a.features.display()))?;
    let q = index
        .make_query("", "", &features)
        .context("building query signature")?;
    let ranking = rank(&index, &q, a.metric)?;
    let mut stdout = io::stdout().lock();
    for (i, r) in ranking.ranked.iter().take(a.top as usize).enumerate() {
        writeln!(
            stdout,
            "{}\t{}\t{}\t{}",
            i + 1,
            r.item_id,
            r.category,
            c_exp(r.distance, 6)
        )?;
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let index =
        load_index(&a.index).with_context(|| format!("loading index {}", a.index.display()))?;
    let items = load_items(&a.queries)?;
    if items.is_empty() {
        bail!("query manifest {} lists no items", a.queries.display());
    }
    let queries = index
        .make_queries(&items)
        .context("building query signatures")?;
    let metrics: Vec<MetricKind> = match a.metric {
        Some(m) => vec![m],
        None => MetricKind::ALL
            .into_iter()
            .filter(|m| !m.requires_gmm() || index.mode() == IndexMode::Gmm)
            .collect(),
    };
    let cutoffs = &a.cutoffs.0;
    let max_c = *cutoffs.last().expect("at least one cutoff");

    let mut stdout = io::stdout().lock();
    write!(stdout, "{:<16}", "metric")?;
    for c in cutoffs {
        write!(stdout, "{:>9}", format!("P@{c}"))?;
    }
    writeln!(stdout, "{:>9}{:>14}", format!("MAP@{max_c}"), "sec/pair")?;
    for m in metrics {
        let r = eval_index(&index, &queries, m, cutoffs)?;
        write!(stdout, "{:<16}", m.name())?;
        for p in &r.mean_precision {
            write!(stdout, "{p:>9.4}")?;
        }
        writeln!(
            stdout,
            "{:>9.4}{:>14}",
            r.headline_map(),
            c_exp(r.mean_pair_seconds, 3)
        )?;
    }
    Ok(())
}

pub fn gen_synthetic(a: GenArgs) -> Result<()> {
    let params = SyntheticParams {
        categories: a.categories as usize,
        items_per_category: a.items as usize,
        rows: a.rows as usize,
        dim: a.dim as usize,
        separation: a.separation,
        anisotropy: a.anisotropy,
        seed: a.seed,
    };
    let ds = gen(&params)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut records = Vec::with_capacity(ds.items.len());
    for it in &ds.items {
        let file = format!("{}.dfv", it.item_id);
        write_features(&a.out.join(&file), &it.features)?;
        records.push(ManifestRecord {
            item_id: it.item_id.clone(),
            category: it.category.clone(),
            path: PathBuf::from(file),
        });
    }
    let manifest = a.out.join("manifest.tsv");
    write_manifest(&manifest, &records)?;
    println!(
        "wrote {} items in {} categories ({} x {}) -> {}",
        records.len(),
        params.categories,
        params.rows,
        params.dim,
        manifest.display()
    );
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let index =
        load_index(&a.index).with_context(|| format!("loading index {}", a.index.display()))?;
    let r = bench_pairs(&index, a.metric, a.pairs as usize, a.seed)?;
    println!(
        "metric {}, dim {}, {} pairs (seed {}, pair digest {:016x})",
        a.metric,
        index.dim(),
        r.pairs.len(),
        a.seed,
        r.pair_digest()
    );
    println!("mean\t{} s", c_exp(r.mean(), 3));
    println!("median\t{} s", c_exp(r.median(), 3));
    println!("p95\t{} s", c_exp(r.percentile(0.95), 3));
    Ok(())
}
