//! Command implementations behind the `epmine` binary: data generation,
//! training, evaluation, the group-size sweep, and mining inspection.
//! Every command is a pure function of its config, so re-runs produce
//! byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::data::{
    generate_synthetic, load_features, sample_group_batch, split_by_class, write_features,
    FileFormat, LabeledDataset, SamplerConfig,
};
use crate::encoder::{forward, load_checkpoint, save_checkpoint, train, MlpParams};
use crate::error::{Error, Result};
use crate::eval::{intra_class_spread, neighbor_stats, recall_at_k, RetrievalMode};
use crate::linalg::{cosine_similarity_matrix, EmbeddingMatrix};
use crate::losses::LossStrategy;
use crate::mining;

fn format_of(path: &Path, fallback: FileFormat) -> FileFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("emb1") => FileFormat::Emb1,
        Some("csv") => FileFormat::Csv,
        _ => fallback,
    }
}

fn load_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<LabeledDataset> {
    load_features(path, format_of(path, cfg.data_format))
}

fn require_dataset(cfg: &ExperimentConfig) -> Result<&PathBuf> {
    cfg.dataset
        .as_ref()
        .ok_or_else(|| Error::Config("missing required key 'dataset'".into()))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("checkpoint.mlp1"))
}

fn embed_dataset(params: &MlpParams, ds: &LabeledDataset) -> Result<EmbeddingMatrix> {
    if ds.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: ds.dim(),
        });
    }
    let (e, _) = forward(params, &ds.features)?;
    Ok(e)
}

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let spec = cfg.synthetic_spec();
    let ds = generate_synthetic(&spec)?;
    let ext = match cfg.data_format {
        FileFormat::Csv => "csv",
        FileFormat::Emb1 => "emb1",
    };
    let path = dir.join(format!("dataset.{ext}"));
    write_features(&ds.features, &ds.labels, &path, cfg.data_format)?;
    println!(
        "wrote {} n={} dim={} classes={} modes_per_class={}",
        path.display(),
        ds.len(),
        ds.dim(),
        ds.num_classes(),
        spec.modes_per_class
    );
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let ds = load_dataset(cfg, require_dataset(cfg)?)?;
    let (params, log) = train(
        &ds,
        &cfg.mlp_config(ds.dim()),
        &cfg.sampler_config(),
        &cfg.loss_config(),
        &cfg.train_config(),
        cfg.seed,
    )?;
    let ckpt = checkpoint_path(cfg);
    save_checkpoint(&params, &ckpt)?;
    let mut csv = String::from("epoch,batch,loss,lr\n");
    for r in &log.batches {
        writeln!(csv, "{},{},{:.8e},{:.8e}", r.epoch, r.batch, r.loss, r.lr).unwrap();
    }
    std::fs::write(dir.join("train_log.csv"), csv)?;
    println!("wrote {}", ckpt.display());
    if let (Some(first), Some(last)) = (log.epoch_mean_loss.first(), log.epoch_mean_loss.last()) {
        println!("epoch_mean_loss_first={first:.6}");
        println!("epoch_mean_loss_last={last:.6}");
    }
    Ok(())
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let params = load_checkpoint(&checkpoint_path(cfg))?;
    let query_ds = load_dataset(cfg, require_dataset(cfg)?)?;
    let query = embed_dataset(&params, &query_ds)?;
    let rcfg = cfg.retrieval_config();
    let report = match rcfg.mode {
        RetrievalMode::SelfQuery => {
            recall_at_k(&query, &query_ds.labels, &query, &query_ds.labels, &rcfg)?
        }
        RetrievalMode::QueryGallery => {
            let gpath = cfg
                .gallery
                .as_ref()
                .ok_or_else(|| Error::Config("query_gallery mode needs key 'gallery'".into()))?;
            let gallery_ds = load_dataset(cfg, gpath)?;
            let gallery = embed_dataset(&params, &gallery_ds)?;
            recall_at_k(&query, &query_ds.labels, &gallery, &gallery_ds.labels, &rcfg)?
        }
    };
    let stats = neighbor_stats(&query, &query_ds.labels);
    let spread = intra_class_spread(&query, &query_ds.labels)?;
    std::fs::write(dir.join("report.txt"), report.to_text())?;
    std::fs::write(dir.join("neighbor_stats.csv"), stats.to_csv())?;
    std::fs::write(dir.join("spread.csv"), spread.to_csv())?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let ds = load_dataset(cfg, require_dataset(cfg)?)?;
    for &n in &cfg.sweep_group_sizes {
        if n > cfg.batch_size {
            return Err(Error::Config(format!(
                "sweep group size {n} exceeds batch_size {}",
                cfg.batch_size
            )));
        }
    }
    let (train_ds, test_ds) = split_by_class(&ds, cfg.train_fraction, cfg.seed)?;
    let mut csv = String::from("strategy,n,recall_at_1\n");
    for &strategy in &cfg.sweep_strategies {
        for &n in &cfg.sweep_group_sizes {
            let r1 = sweep_cell(cfg, &train_ds, &test_ds, strategy, n)?;
            writeln!(csv, "{},{},{:.6}", strategy.name(), n, r1).unwrap();
            println!("strategy={} n={} recall_at_1={:.6}", strategy.name(), n, r1);
        }
    }
    std::fs::write(dir.join("sweep.csv"), csv)?;
    Ok(())
}

fn sweep_cell(
    cfg: &ExperimentConfig,
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    strategy: LossStrategy,
    group_size: usize,
) -> Result<f64> {
    let mut loss_cfg = cfg.loss_config();
    loss_cfg.strategy = strategy;
    let sampler = SamplerConfig {
        group_size,
        ..cfg.sampler_config()
    };
    // the initialization seed is shared across cells so comparisons isolate
    // the mining strategy
    let (params, _) = train(
        train_ds,
        &cfg.mlp_config(train_ds.dim()),
        &sampler,
        &loss_cfg,
        &cfg.train_config(),
        cfg.seed,
    )?;
    let e = embed_dataset(&params, test_ds)?;
    let mut rcfg = cfg.retrieval_config();
    rcfg.k_values = vec![1];
    rcfg.mode = RetrievalMode::SelfQuery;
    let report = recall_at_k(&e, &test_ds.labels, &e, &test_ds.labels, &rcfg)?;
    Ok(report.recall(1).unwrap())
}

fn fmt_pick(s: &crate::linalg::SimilarityMatrix, pick: Option<usize>, anchor: usize) -> String {
    match pick {
        Some(j) => format!("{j}({:+.4})", s.get(anchor, j)),
        None => "-".to_string(),
    }
}

pub fn cmd_mine_debug(cfg: &ExperimentConfig) -> Result<()> {
    let params = load_checkpoint(&checkpoint_path(cfg))?;
    let ds = load_dataset(cfg, require_dataset(cfg)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = sample_group_batch(&ds, &cfg.sampler_config(), &mut rng)?;
    let x = ds.features_of(&batch.indices);
    let (e, _) = forward(&params, &x)?;
    let s = cosine_similarity_matrix(&e);
    let labels = &batch.labels;

    println!("batch of {} items, {} columns: similarity matrix", s.size(), s.size());
    for i in 0..s.size() {
        let row: Vec<String> = (0..s.size()).map(|j| format!("{:+.4}", s.get(i, j))).collect();
        println!("{i:3} [{}] {}", labels[i], row.join(" "));
    }
    println!("anchor label ep hp hn shn en");
    for a in 0..s.size() {
        let ep = mining::mine_easy_positive(&s, labels, a);
        let hp = mining::mine_hard_positive(&s, labels, a);
        let hn = mining::mine_hard_negative(&s, labels, a);
        let en = mining::mine_easy_negative(&s, labels, a);
        let shn = ep.and_then(|p| mining::mine_semi_hard_negative(&s, labels, a, s.get(a, p)));
        let shn_text = match (ep, shn, hn) {
            (Some(_), Some(n), _) => fmt_pick(&s, Some(n), a),
            (Some(_), None, Some(n)) => format!("fallback:{}", fmt_pick(&s, Some(n), a)),
            _ => "-".to_string(),
        };
        println!(
            "{a:3} {} {} {} {} {} {}",
            labels[a],
            fmt_pick(&s, ep, a),
            fmt_pick(&s, hp, a),
            fmt_pick(&s, hn, a),
            shn_text,
            fmt_pick(&s, en, a),
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn synth_cfg(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.num_classes = 4;
        cfg.modes_per_class = 1;
        cfg.samples_per_class = 8;
        cfg.input_dim = 4;
        cfg.batch_size = 16;
        cfg.group_size = 4;
        cfg.hidden_dims = vec![8];
        cfg.embed_dim = 4;
        cfg.epochs = 2;
        cfg.lr_decay_epochs = vec![];
        cfg.out_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn gen_then_train_then_eval() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = synth_cfg(tmp.path());
        cmd_gen_data(&cfg).unwrap();
        let data_path = tmp.path().join("dataset.csv");
        assert!(data_path.exists());
        cfg.dataset = Some(data_path);
        cmd_train(&cfg).unwrap();
        assert!(tmp.path().join("checkpoint.mlp1").exists());
        assert!(tmp.path().join("train_log.csv").exists());
        cfg.k_values = vec![1, 2];
        cmd_eval(&cfg).unwrap();
        let report = std::fs::read_to_string(tmp.path().join("report.txt")).unwrap();
        assert!(report.contains("recall_at_1="));
        // outputs parse back
        let stats = std::fs::read_to_string(tmp.path().join("neighbor_stats.csv")).unwrap();
        assert!(stats.starts_with("index,label,nearest_pos_sim,nearest_neg_sim,correct_at_1"));
    }

    #[test]
    fn gen_data_deterministic_bytes() {
        let t1 = tempfile::tempdir().unwrap();
        let t2 = tempfile::tempdir().unwrap();
        let c1 = synth_cfg(t1.path());
        let c2 = synth_cfg(t2.path());
        cmd_gen_data(&c1).unwrap();
        cmd_gen_data(&c2).unwrap();
        let a = std::fs::read(t1.path().join("dataset.csv")).unwrap();
        let b = std::fs::read(t2.path().join("dataset.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_epochs_zero_equals_init() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = synth_cfg(tmp.path());
        cfg.epochs = 0;
        cmd_gen_data(&cfg).unwrap();
        cfg.dataset = Some(tmp.path().join("dataset.csv"));
        cmd_train(&cfg).unwrap();
        let params = load_checkpoint(&tmp.path().join("checkpoint.mlp1")).unwrap();
        let ds = load_features(&tmp.path().join("dataset.csv"), FileFormat::Csv).unwrap();
        let init = crate::encoder::init_params(&cfg.mlp_config(ds.dim())).unwrap();
        assert_eq!(params, init);
    }

    #[test]
    fn mine_debug_single_class_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = synth_cfg(tmp.path());
        // one class only
        let spec = SyntheticSpec {
            num_classes: 1,
            ..cfg.synthetic_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let path = tmp.path().join("one.csv");
        write_features(&ds.features, &ds.labels, &path, FileFormat::Csv).unwrap();
        cfg.dataset = Some(path);
        // need a checkpoint on disk
        let params = crate::encoder::init_params(&cfg.mlp_config(4)).unwrap();
        save_checkpoint(&params, &tmp.path().join("checkpoint.mlp1")).unwrap();
        match cmd_mine_debug(&cfg) {
            Err(Error::NoPositivePair) => {}
            other => panic!("{other:?}"),
        }
    }
}
