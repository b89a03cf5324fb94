// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use resid_scope::dataset::{IdiomInstance, Variant};
use resid_scope::harness::{
    run, run_because_patch, run_head_scan, run_sublayer_knockout, Experiment, ExperimentConfig, ExperimentOutput,
    InputHash, Inputs, LayerRange, Manifest, PatchSource, Sublayer,
};
use resid_scope::interventions::{knockout, HookPoint, KnockoutMode};
use resid_scope::io::OutputFormat;
use resid_scope::metrics::{delta_i, interpretation_scores, DELTA_F, DELTA_L};
use resid_scope::model::{logits, Weights};
use resid_scope::synth::{synthetic_instances, tiny_config, tiny_model};
use resid_scope::Error;

fn setup(n: usize) -> (Weights, Vec<IdiomInstance>) {
    (tiny_model(21).unwrap(), synthetic_instances(&tiny_config(), n, 22).unwrap())
}

fn cfg(e: Experiment) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(e);
    c.resamples = 100;
    c.mode = KnockoutMode::Zero;
    c.top_k = 1;
    c
}

/// Mean `ΔF`/`ΔL` of zeroing `hooks(layer, position)` over the idiom span,
/// computed with full forward passes.
fn oracle_means(
    w: &Weights,
    data: &[IdiomInstance],
    hooks: impl Fn(usize) -> HookPoint,
) -> (f64, f64) {
    let mut sf = 0.0;
    let mut sl = 0.0;
    for inst in data {
        let tokens = inst.tokens(Variant::Ambiguous);
        let (a, b) = inst.idiom_span.into();
        let base = interpretation_scores(&logits(w, tokens, None).unwrap(), &inst.c_f, &inst.c_l).unwrap();
        let targets: Vec<_> = (a..b).map(|p| (hooks(p), KnockoutMode::Zero)).collect();
        let spec = knockout(&targets, None).unwrap();
        let z = logits(w, tokens, Some(&spec)).unwrap();
        let d = delta_i(interpretation_scores(&z, &inst.c_f, &inst.c_l).unwrap(), base);
        sf += d.df;
        sl += d.dl;
    }
    (sf / data.len() as f64, sl / data.len() as f64)
}

#[test]
fn head_scan_cells_match_per_head_full_passes() {
    let (w, data) = setup(6);
    let (sweep, sets) = run_head_scan(&Inputs::new(&w, &data), &cfg(Experiment::HeadScan)).unwrap();
    assert_eq!(sweep.cells.len(), 4);
    for cell in &sweep.cells {
        let (l, h) = (cell.layer.unwrap(), cell.head.unwrap());
        let (f, lit) = oracle_means(&w, &data, |p| HookPoint::head_output(l, p, h));
        assert!((cell.metric(DELTA_F).unwrap().mean - f).abs() < 1e-12, "head ({l}, {h})");
        assert!((cell.metric(DELTA_L).unwrap().mean - lit).abs() < 1e-12, "head ({l}, {h})");
        assert_eq!(cell.n, 6);
    }
    sets.validate(2, 2).unwrap();
    // With one head per set the idiomatic head is never the one raising F the most.
    let best_f = sweep
        .cells
        .iter()
        .max_by(|a, b| a.metric(DELTA_F).unwrap().mean.total_cmp(&b.metric(DELTA_F).unwrap().mean))
        .unwrap();
    assert_ne!(sets.idiomatic[0], (best_f.layer.unwrap(), best_f.head.unwrap()));
}

#[test]
fn sublayer_knockout_matches_full_passes_and_respects_layer_ranges() {
    let (w, data) = setup(5);
    let mut c = cfg(Experiment::SublayerKnockout);
    c.target = Sublayer::Attn;
    c.layers = Some(LayerRange { start: 1, end: 2 });
    let s = run_sublayer_knockout(&Inputs::new(&w, &data), &c).unwrap();
    assert_eq!(s.cells.len(), 1);
    assert_eq!(s.cells[0].layer, Some(1));
    let (f, l) = oracle_means(&w, &data, |p| HookPoint::attn_output(1, p));
    assert!((s.cells[0].metric(DELTA_F).unwrap().mean - f).abs() < 1e-12);
    assert!((s.cells[0].metric(DELTA_L).unwrap().mean - l).abs() < 1e-12);

    c.layers = Some(LayerRange { start: 0, end: 3 });
    assert!(matches!(run_sublayer_knockout(&Inputs::new(&w, &data), &c), Err(Error::Config(_))));
}

#[test]
fn other_idiom_because_patch_adds_b_scores() {
    let (w, data) = setup(4);
    let mut c = cfg(Experiment::BecausePatch);
    c.source = PatchSource::OtherIdiom;
    let s = run_because_patch(&Inputs::new(&w, &data), &c).unwrap();
    let names = s.metric_names();
    assert!(names.contains(&"delta_f_b".to_string()) && names.contains(&"delta_l_b".to_string()));
    c.reverse = true;
    assert!(matches!(run_because_patch(&Inputs::new(&w, &data), &c), Err(Error::Config(_))));
}

#[test]
fn experiments_needing_sidecars_say_so() {
    let (w, data) = setup(4);
    let inputs = Inputs::new(&w, &data);
    for e in [Experiment::ComponentPatch, Experiment::HeadDivergence, Experiment::KernelAlign] {
        let err = run(&inputs, &cfg(e)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{e:?}: {err}");
    }
    assert!(run(&Inputs::new(&w, &[]), &cfg(Experiment::Validate)).is_err());
}

#[test]
fn outputs_and_manifest_are_written_next_to_each_other() {
    let (w, data) = setup(4);
    let dir = tempfile::tempdir().unwrap();
    let out = run(&Inputs::new(&w, &data), &cfg(Experiment::HeadScan)).unwrap();
    let path = dir.path().join("scan.csv");
    let written = out.write(&path, OutputFormat::Csv, "scan").unwrap();
    assert_eq!(written, vec![path.clone(), dir.path().join("scan.heads.json")]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("layer,head,metric,mean,ci_lo,ci_hi,significant,n,p_value\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 2);

    let summary = run(&Inputs::new(&w, &data), &cfg(Experiment::Validate)).unwrap();
    assert!(matches!(summary, ExperimentOutput::Validation(_)));
    assert!(summary.write(&dir.path().join("v.svg"), OutputFormat::Svg, "v").is_err());

    let c = cfg(Experiment::HeadScan);
    let m = Manifest::new(&c, vec![InputHash::of("dataset", &path).unwrap()]).unwrap();
    let json = m.to_json().unwrap();
    let mpath = dir.path().join("scan.manifest.json");
    std::fs::write(&mpath, &json).unwrap();
    let back = Manifest::load(&mpath).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.seed, c.seed);
    assert_eq!(back.input("dataset").unwrap().sha256.len(), 64);
}

#[test]
fn kernel_align_against_the_models_own_states_is_perfect() {
    use resid_scope::harness::run_kernel_align;
    use resid_scope::io::embeddings::{EmbeddingRow, EmbeddingTable, Meaning};
    use resid_scope::model::{forward, ForwardOptions};
    let (w, data) = setup(8);
    let top = w.config.num_layers - 1;
    let mut emb = EmbeddingTable::default();
    for inst in &data {
        let rec = forward(&w, inst.tokens(Variant::Ambiguous), None, ForwardOptions::sublayers()).unwrap();
        let own = rec.layers[top].resid_out.row(inst.subsequent_token_index).to_vec();
        emb.insert(EmbeddingRow { id: inst.id.clone(), variant: Meaning::FigurativeMeaning, vector: own }).unwrap();
        let noise: Vec<f32> = (0..w.config.hidden_dim).map(|i| ((inst.id.len() * 31 + i * 17) % 13) as f32 - 6.0).collect();
        emb.insert(EmbeddingRow { id: inst.id.clone(), variant: Meaning::LiteralMeaning, vector: noise }).unwrap();
    }
    let mut c = cfg(Experiment::KernelAlign);
    c.k_neighbors = 3;
    let s = run_kernel_align(&Inputs::new(&w, &data).with_embeddings(&emb), &c).unwrap();
    let cell = s.cells.iter().find(|c| c.layer == Some(top)).unwrap();
    let m = cell.metric("subsequent:figurative").unwrap();
    assert_eq!((m.mean, m.ci_lo, m.ci_hi), (1.0, 1.0, 1.0));
    assert_eq!(cell.metrics.len(), 8);
}

#[test]
fn because_patch_at_the_last_layer_cannot_reach_the_last_position() {
    // The top-layer residual at `because` feeds no later computation, so
    // the closed form of the final-layer patch is zero change.
    let (w, data) = setup(5);
    for source in [PatchSource::Figurative, PatchSource::Literal] {
        let mut c = cfg(Experiment::BecausePatch);
        c.source = source;
        let s = run_because_patch(&Inputs::new(&w, &data), &c).unwrap();
        let last = s.cells.last().unwrap();
        assert_eq!(last.layer, Some(w.config.num_layers - 1));
        assert_eq!(last.metric(DELTA_F).unwrap().mean, 0.0);
        assert_eq!(last.metric(DELTA_L).unwrap().mean, 0.0);
        assert!(s.cells[0].metric(DELTA_F).unwrap().mean != 0.0);
    }
}
