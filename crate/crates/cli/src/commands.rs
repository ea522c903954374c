use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pepgen::analysis::{descriptors, global_align, novelty_report, DescriptorVector, NoveltyHit};
use pepgen::autoencoder::{evaluate, train, Autoencoder, EvalReport, LatentPoint, TrainOptions};
use pepgen::corpus::synthetic::{planted_corpus, SyntheticSpec};
use pepgen::corpus::{
    load_corpus, read_sequences, Attribute, LabeledCorpus, PeptideSequence, Split,
};
use pepgen::langmodel::{score_sequences, train_lm, LanguageModel, SequenceScorer, UniformScorer};
use pepgen::latent::{
    embed_corpus, fit_gmm, fit_latent_classifier, interpolate, LatentClassifier, LatentDataset, MixtureDensity,
};
use pepgen::sampler::{generate_candidates, write_candidate_csv, write_fasta, AttributeTarget, Candidate, SamplerConfig};
use pepgen::screening::{
    load_contact_manifest, screen_pipeline, simscreen, train_seq_classifier, write_simscreen_csv, write_verdict_csv,
    ScreenError, SeqClassifier, SeqClfReport, Stage, StageCount, StageModels,
};

use crate::artifacts::{Provenance, Run};
use crate::config::{parse_attribute, EMBED_SEED_OFFSET, EVAL_SEED_OFFSET, SAMPLER_SEED_OFFSET};
use crate::failure::{Context, Failure, Result};

pub const CORPUS: &str = "corpus.json";
pub const AE: &str = "ae.ckpt";
pub const LM: &str = "lm.ckpt";
pub const LATENTS: &str = "latents.json";
pub const GMM: &str = "gmm.ckpt";
pub const CANDIDATES: &str = "candidates.json";
pub const SCREEN_RESULT: &str = "screen_result.json";

fn latent_clf_file(a: Attribute) -> String {
    format!("latent_clf_{}.ckpt", a.name())
}

fn seq_clf_file(a: Attribute) -> String {
    format!("seq_clf_{}.ckpt", a.name())
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).data_err("serializing")?;
        out.push(b'\n');
    }
    Ok(out)
}

fn load_corpus_artifact(run: &Run) -> Result<LabeledCorpus> {
    Ok(run.read_json::<CorpusOnly>(CORPUS, "ingest")?.1.corpus)
}

fn load_ae(run: &Run) -> Result<Autoencoder> {
    Autoencoder::from_checkpoint(&run.load_checkpoint(AE, "train-ae")?).model_err("autoencoder checkpoint")
}

fn load_lm(run: &Run) -> Result<LanguageModel> {
    LanguageModel::from_checkpoint(&run.load_checkpoint(LM, "lm-train")?).model_err("language model checkpoint")
}

fn load_latent_clf(run: &Run, a: Attribute) -> Result<LatentClassifier> {
    LatentClassifier::from_checkpoint(&run.load_checkpoint(&latent_clf_file(a), "fit-latent-clf")?)
        .model_err("latent classifier checkpoint")
}

fn validate_all(raw: Vec<String>, max_len: usize) -> Result<Vec<PeptideSequence>> {
    raw.into_iter()
        .enumerate()
        .map(|(i, s)| {
            PeptideSequence::new(&s, max_len).map_err(|r| Failure::data(format!("sequence {} `{s}`: {r}", i + 1)))
        })
        .collect()
}

fn read_input_sequences(path: &Path, max_len: usize) -> Result<Vec<PeptideSequence>> {
    validate_all(read_sequences(path).data_err("reading sequences")?, max_len)
}

fn screen_failure(context: &str) -> impl Fn(ScreenError) -> Failure + '_ {
    move |e| match e {
        ScreenError::SingleClass { .. } | ScreenError::EmptySample | ScreenError::Io(_) | ScreenError::Csv(_) => {
            Failure::data(format!("{context}: {e}"))
        }
        ScreenError::BadContactSeries { .. } => Failure::data(format!("{context}: {e}")),
        ScreenError::Invalid(_) | ScreenError::MissingStageModel(_) => Failure::config(format!("{context}: {e}")),
        _ => Failure::model(format!("{context}: {e}")),
    }
}

// ---------------------------------------------------------------------------------------

pub fn ingest(run: &mut Run) -> Result<()> {
    let c = &run.cfg;
    let corpus = if c.corpus.synthetic_count > 0 {
        let spec = SyntheticSpec {
            count: c.corpus.synthetic_count,
            labeled_fraction: c.corpus.synthetic_labeled_fraction,
            ..SyntheticSpec::default()
        };
        LabeledCorpus::from_records(planted_corpus(&spec, c.seed), c.seed, c.corpus.max_seq_length)
    } else {
        let seqs = c
            .paths
            .sequences
            .as_deref()
            .ok_or_else(|| Failure::config("set paths.sequences or corpus.synthetic_count"))?;
        for p in std::iter::once(seqs).chain(c.paths.labels.iter().map(PathBuf::as_path)) {
            if !p.exists() {
                return Err(Failure::config(format!("{} does not exist", p.display())));
            }
        }
        load_corpus(seqs, &c.paths.labels, c.seed, c.corpus.max_seq_length).data_err("loading corpus")?
    };
    if corpus.is_empty() {
        return Err(Failure::data("no valid sequences in the input"));
    }
    let count = |s| corpus.split(s).count();
    log::info!(
        "corpus: {} sequences (train {}, heldout {}, test {}), {} rejected",
        corpus.len(),
        count(Split::Train),
        count(Split::Heldout),
        count(Split::Test),
        corpus.report.rejected_count()
    );
    run.write_json(CORPUS, &serde_json::json!({ "corpus": corpus }))?;
    Ok(())
}

pub fn train_ae(run: &mut Run) -> Result<()> {
    let corpus = load_corpus_artifact(run)?;
    let out = train(&corpus, &run.cfg.ae, &TrainOptions::default()).model_err("training autoencoder")?;
    run.save_checkpoint(AE, out.model.to_checkpoint())?;
    run.write_file("ae_train.jsonl", &jsonl(&out.log)?)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalOut<'a> {
    scorer: &'a str,
    heldout_sequences: usize,
    prior_samples: usize,
    metrics: EvalReport,
}

pub fn eval_ae(run: &mut Run, use_lm: bool) -> Result<()> {
    let corpus = load_corpus_artifact(run)?;
    let model = load_ae(run)?;
    let heldout = corpus.sequences(Split::Test);
    if heldout.is_empty() {
        return Err(Failure::data("test split is empty"));
    }
    let lm = if use_lm { Some(load_lm(run)?) } else { None };
    let scorer: &dyn SequenceScorer = match &lm {
        Some(m) => m,
        None => &UniformScorer,
    };
    let n = run.cfg.eval.prior_samples;
    let metrics = evaluate(&model, &heldout, scorer, n, run.cfg.seed_for(EVAL_SEED_OFFSET)).model_err("evaluating")?;
    log::info!("heldout BLEU {:.4}, recon NLL {:.4}, KL/dim {:.4}", metrics.bleu, metrics.recon_nll, metrics.kl_per_dim);
    let out = EvalOut {
        scorer: if use_lm { "lm" } else { "uniform" },
        heldout_sequences: heldout.len(),
        prior_samples: n,
        metrics,
    };
    run.write_json("ae_eval.json", &out)?;
    Ok(())
}

pub fn lm_train(run: &mut Run) -> Result<()> {
    let corpus = load_corpus_artifact(run)?;
    let (lm, log) = train_lm(&corpus, &run.cfg.lm).model_err("training language model")?;
    run.save_checkpoint(LM, lm.to_checkpoint())?;
    run.write_file("lm_train.jsonl", &jsonl(&log)?)?;
    Ok(())
}

pub fn lm_score(run: &mut Run, input: &Path, out: &Path) -> Result<()> {
    let lm = load_lm(run)?;
    let seqs = read_input_sequences(input, run.cfg.corpus.max_seq_length)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sequence", "perplexity"]).data_err("writing csv")?;
    for (s, p) in score_sequences(&lm, &seqs) {
        w.write_record([s, format!("{p:.6}")]).data_err("writing csv")?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::data(e.to_string()))?;
    run.write_file_at(out, &bytes)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LatentSplit {
    points: Vec<Vec<f64>>,
    source: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Latents {
    dim: usize,
    samples_per_seq: usize,
    train: LatentSplit,
    test: LatentSplit,
}

pub fn embed(run: &mut Run) -> Result<()> {
    let corpus = load_corpus_artifact(run)?;
    let model = load_ae(run)?;
    let k = run.cfg.embed.samples_per_seq;
    let seed = run.cfg.seed_for(EMBED_SEED_OFFSET);
    let split = |s, seed| -> Result<LatentSplit> {
        let d = embed_corpus(&model, &corpus, s, k, seed).model_err("embedding")?;
        Ok(LatentSplit { points: d.points, source: d.source })
    };
    let out = Latents {
        dim: model.latent_dim(),
        samples_per_seq: k,
        train: split(Split::Train, seed)?,
        test: split(Split::Test, seed.wrapping_add(1))?,
    };
    run.write_json(LATENTS, &out)?;
    Ok(())
}

fn load_latents(run: &Run, corpus: &LabeledCorpus) -> Result<(LatentDataset, LatentDataset)> {
    let lat: Latents = run.read_json(LATENTS, "embed")?.1;
    let rebuild = |s: LatentSplit| -> Result<LatentDataset> {
        let labels = s
            .source
            .iter()
            .map(|&i| corpus.entries.get(i).map(|e| e.labels.clone()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Failure::data("latents refer to entries missing from the corpus"))?;
        Ok(LatentDataset { dim: lat.dim, points: s.points, source: s.source, labels })
    };
    Ok((rebuild(lat.train)?, rebuild(lat.test)?))
}

pub fn fit_gmm_cmd(run: &mut Run) -> Result<()> {
    let corpus = load_corpus_artifact(run)?;
    let (train, test) = load_latents(run, &corpus)?;
    let fit = fit_gmm(&train.points, &test.points, &run.cfg.gmm).model_err("fitting mixture")?;
    log::info!(
        "mixture: {} iterations, converged {}, heldout LL {:?}",
        fit.train_ll.len().saturating_sub(1),
        fit.converged,
        fit.final_heldout_ll()
    );
    run.save_checkpoint(GMM, fit.gmm.to_checkpoint())?;
    let summary = serde_json::json!({
        "components": fit.gmm.component_count(),
        "converged": fit.converged,
        "reseeds": fit.reseeds,
        "train_ll": fit.train_ll,
        "heldout_ll": fit.heldout_ll,
    });
    run.write_json("gmm_fit.json", &summary)?;
    Ok(())
}

pub fn fit_latent_clf(run: &mut Run) -> Result<()> {
    let corpus = load_corpus_artifact(run)?;
    let (train, test) = load_latents(run, &corpus)?;
    let attrs = run.cfg.latent_clf.attributes.iter().map(|a| parse_attribute(a)).collect::<Result<Vec<_>>>()?;
    for a in attrs {
        let (xs, ys) = train.labeled(a);
        if xs.is_empty() {
            return Err(Failure::data(format!("no training latents labeled for `{a}`")));
        }
        let fit = fit_latent_classifier(a, &xs, &ys, &run.cfg.logistic).model_err("fitting latent classifier")?;
        let (tx, ty) = test.labeled(a);
        let test_accuracy = (!tx.is_empty()).then(|| fit.classifier.accuracy(&tx, &ty));
        log::info!("latent classifier `{a}`: test accuracy {test_accuracy:?}");
        run.save_checkpoint(&latent_clf_file(a), fit.classifier.to_checkpoint())?;
        let summary = serde_json::json!({
            "attribute": a.name(),
            "train_points": xs.len(),
            "train_accuracy": fit.classifier.accuracy(&xs, &ys),
            "test_points": tx.len(),
            "test_accuracy": test_accuracy,
            "iterations": fit.iterations,
            "converged": fit.converged,
        });
        run.write_json(&format!("latent_clf_{}.json", a.name()), &summary)?;
    }
    Ok(())
}

pub fn train_seq_clf(run: &mut Run, attrs: &[String]) -> Result<()> {
    let corpus = load_corpus_artifact(run)?;
    let attrs: Vec<Attribute> = if attrs.is_empty() {
        run.cfg.screen.stages.iter().filter_map(|s| s.attribute()).collect()
    } else {
        attrs.iter().map(|a| parse_attribute(a)).collect::<Result<_>>()?
    };
    for a in attrs {
        let (clf, report): (SeqClassifier, SeqClfReport) =
            train_seq_classifier(&corpus, a, &run.cfg.seq_clf).map_err(screen_failure("training sequence classifier"))?;
        log::info!("sequence classifier `{a}`: test accuracy {:.3}", report.test_accuracy);
        run.save_checkpoint(&seq_clf_file(a), clf.to_checkpoint())?;
        run.write_json(&format!("seq_clf_{}.json", a.name()), &report)?;
    }
    Ok(())
}

fn parse_target(s: &str) -> Result<AttributeTarget> {
    let mut pairs = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (a, v) = part
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("target `{part}` is not attr=0|1")))?;
        let v = match v.trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Failure::config(format!("target value `{other}` is not 0 or 1"))),
        };
        pairs.push((parse_attribute(a)?, v));
    }
    AttributeTarget::new(pairs).config_err("target")
}

#[derive(Serialize, Deserialize)]
struct CandidatesOut {
    target: String,
    requested: usize,
    accepted_points: usize,
    attempts: usize,
    acceptance_rate: f64,
    candidates: Vec<Candidate>,
}

pub fn class_sample(run: &mut Run) -> Result<()> {
    let target = parse_target(&run.cfg.sampler.target)?;
    let corpus = load_corpus_artifact(run)?;
    let model = load_ae(run)?;
    let gmm = MixtureDensity::from_checkpoint(&run.load_checkpoint(GMM, "fit-gmm")?).model_err("mixture checkpoint")?;
    let attrs: Vec<Attribute> = target.targets.iter().map(|t| t.0).collect();
    let classifiers = attrs.iter().map(|&a| load_latent_clf(run, a)).collect::<Result<Vec<_>>>()?;
    let s = &run.cfg.sampler;
    let config = SamplerConfig {
        workers: s.workers,
        max_attempts: s.max_attempts,
        seed: run.cfg.seed_for(SAMPLER_SEED_OFFSET),
    };
    let set = generate_candidates(&model, &gmm, &classifiers, &target, s.n, &config, &corpus)
        .model_err("sampling candidates")?;
    if set.accepted_points < s.n {
        log::warn!("proposal budget exhausted: {} of {} accepted", set.accepted_points, s.n);
    }
    log::info!(
        "{} unique candidates from {} accepted points, acceptance rate {:.4}",
        set.candidates.len(),
        set.accepted_points,
        set.acceptance_rate
    );
    let mut fasta = Vec::new();
    write_fasta(&set.candidates, &mut fasta).data_err("writing fasta")?;
    run.write_file("candidates.fasta", &fasta)?;
    let mut csv_bytes = Vec::new();
    write_candidate_csv(&set.candidates, &classifiers, &mut csv_bytes).data_err("writing csv")?;
    run.write_file("candidates.csv", &csv_bytes)?;
    let out = CandidatesOut {
        target: run.cfg.sampler.target.clone(),
        requested: run.cfg.sampler.n,
        accepted_points: set.accepted_points,
        attempts: set.attempts,
        acceptance_rate: set.acceptance_rate,
        candidates: set.candidates,
    };
    run.write_json(CANDIDATES, &out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct FunnelRow {
    pub stage: String,
    pub evaluated: usize,
    pub passed: usize,
}

#[derive(Serialize, Deserialize)]
struct ScreenOut {
    funnel: Vec<FunnelRow>,
    survivors: Vec<String>,
    audited: Vec<Candidate>,
}

pub fn screen(run: &mut Run) -> Result<()> {
    let cands: CandidatesOut = run.read_json(CANDIDATES, "class-sample")?.1;
    let mut classifiers = Vec::new();
    let mut lm = None;
    for stage in &run.cfg.screen.stages {
        match stage.attribute() {
            Some(a) => {
                let ck = run.load_checkpoint(&seq_clf_file(a), "train-seq-clf")?;
                classifiers.push(SeqClassifier::from_checkpoint(&ck).map_err(screen_failure("sequence classifier"))?);
            }
            None if *stage == Stage::Ppl => lm = Some(load_lm(run)?),
            None => {}
        }
    }
    let mut models = StageModels::default();
    for c in &classifiers {
        models = models.with_classifier(c);
    }
    if let Some(m) = &lm {
        models = models.with_lm(m);
    }
    let result = screen_pipeline(cands.candidates, &models, &run.cfg.screen).map_err(screen_failure("screening"))?;
    log::info!("{} of {} candidates survive", result.survivors.len(), result.audited.len());

    let mut report = Vec::new();
    result.report.write_json(&mut report).map_err(screen_failure("writing report"))?;
    run.write_file("screen_report.json", &report)?;
    let mut verdicts = Vec::new();
    write_verdict_csv(&result, &mut verdicts).map_err(screen_failure("writing verdicts"))?;
    run.write_file("screen_verdicts.csv", &verdicts)?;
    let funnel = result
        .report
        .stages
        .iter()
        .map(|(stage, StageCount { evaluated, passed })| FunnelRow {
            stage: stage.clone(),
            evaluated: *evaluated,
            passed: *passed,
        })
        .collect();
    run.write_json(SCREEN_RESULT, &ScreenOut { funnel, survivors: result.survivors, audited: result.audited })?;
    Ok(())
}

pub fn simscreen_cmd(run: &mut Run) -> Result<()> {
    let manifest = run
        .cfg
        .paths
        .contact_manifest
        .clone()
        .ok_or_else(|| Failure::config("set paths.contact_manifest"))?;
    if !manifest.exists() {
        return Err(Failure::config(format!("{} does not exist", manifest.display())));
    }
    let series = load_contact_manifest(&manifest).map_err(screen_failure("loading contact series"))?;
    let rows = simscreen(&series, &run.cfg.screen).map_err(screen_failure("contact screen"))?;
    log::info!("{} of {} trajectories pass", rows.iter().filter(|r| r.verdict.pass).count(), rows.len());
    let mut bytes = Vec::new();
    write_simscreen_csv(&rows, &mut bytes).map_err(screen_failure("writing csv"))?;
    run.write_file("simscreen.csv", &bytes)?;
    Ok(())
}

/// Six decimals, without a sign on values that round to zero.
fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        s[1..].to_owned()
    } else {
        s
    }
}

fn descriptor_csv(rows: &[(String, DescriptorVector)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sequence"];
    header.extend(DescriptorVector::COLUMNS);
    w.write_record(&header).data_err("writing csv")?;
    for (s, d) in rows {
        let mut rec = vec![s.clone()];
        rec.extend(d.values().iter().map(|&v| fixed6(v)));
        w.write_record(&rec).data_err("writing csv")?;
    }
    w.into_inner().map_err(|e| Failure::data(e.to_string()))
}

pub fn descriptors_cmd(run: &mut Run, input: &Path, out: Option<&Path>) -> Result<()> {
    let seqs = read_input_sequences(input, run.cfg.corpus.max_seq_length)?;
    let a = &run.cfg.analysis;
    let rows: Vec<(String, DescriptorVector)> =
        seqs.iter().map(|s| (s.to_string(), descriptors(s, a.amidated, a.ph))).collect();
    let bytes = descriptor_csv(&rows)?;
    match out {
        Some(p) => run.write_file_at(p, &bytes)?,
        None => run.write_file("descriptors.csv", &bytes)?,
    };
    Ok(())
}

fn novelty_csv(hits: &[NoveltyHit]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["candidate", "closest", "score", "coverage_pct", "identity_pct", "positive_pct", "gap_pct"])
        .data_err("writing csv")?;
    for h in hits {
        let a = &h.alignment;
        w.write_record([
            h.candidate.clone(),
            h.closest.clone(),
            format!("{}", a.score),
            format!("{:.2}", a.coverage_pct),
            format!("{:.2}", a.identity_pct),
            format!("{:.2}", a.positive_pct),
            format!("{:.2}", a.gap_pct),
        ])
        .data_err("writing csv")?;
    }
    w.into_inner().map_err(|e| Failure::data(e.to_string()))
}

/// Aligns two sequences (printed as JSON), or every candidate against the corpus.
pub fn align(run: &mut Run, a: Option<&str>, b: Option<&str>, novelty: bool) -> Result<Option<String>> {
    let max = run.cfg.corpus.max_seq_length;
    match (a, b, novelty) {
        (Some(a), Some(b), false) => {
            let v = validate_all(vec![a.to_owned(), b.to_owned()], max)?;
            let res = global_align(v[0].residues(), v[1].residues());
            Ok(Some(serde_json::to_string_pretty(&res).expect("alignment serializes")))
        }
        (None, None, true) => {
            let corpus = load_corpus_artifact(run)?;
            let cands: CandidatesOut = run.read_json(CANDIDATES, "class-sample")?.1;
            let seqs: Vec<PeptideSequence> = cands.candidates.iter().map(|c| c.sequence.clone()).collect();
            let reference: Vec<PeptideSequence> = corpus.entries.iter().map(|e| e.sequence.clone()).collect();
            let hits = novelty_report(&seqs, &reference).data_err("novelty search")?;
            run.write_file("novelty.csv", &novelty_csv(&hits)?)?;
            Ok(None)
        }
        _ => Err(Failure::config("align takes two sequences, or --novelty alone")),
    }
}

pub fn interpolate_cmd(run: &mut Run, from: &str, to: &str, steps: usize) -> Result<()> {
    let model = load_ae(run)?;
    let ends = validate_all(vec![from.to_owned(), to.to_owned()], run.cfg.corpus.max_seq_length)?;
    let posts = model.encode_batch(&ends).model_err("encoding")?;
    let mut classifiers = Vec::new();
    for a in &run.cfg.latent_clf.attributes {
        let a = parse_attribute(a)?;
        if run.path(&latent_clf_file(a)).exists() {
            classifiers.push(load_latent_clf(run, a)?);
        }
    }
    let start = LatentPoint::new(posts[0].mu.clone());
    let end = LatentPoint::new(posts[1].mu.clone());
    let path = interpolate(&model, &start, &end, steps, &classifiers).map_err(|e| match e {
        pepgen::latent::LatentError::Invalid(m) => Failure::config(m),
        e => Failure::model(format!("interpolating: {e}")),
    })?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_owned(), "sequence".into()];
    header.extend(classifiers.iter().map(|c| format!("p_{}", c.attribute)));
    header.extend(DescriptorVector::COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header).data_err("writing csv")?;
    for st in &path {
        let mut rec = vec![st.index.to_string(), st.sequence.clone()];
        rec.extend(st.probabilities.iter().map(|(_, p)| format!("{p:.6}")));
        rec.extend(st.descriptors.values().iter().map(|&v| fixed6(v)));
        w.write_record(&rec).data_err("writing csv")?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::data(e.to_string()))?;
    run.write_file("interpolation.csv", &bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------------------

#[derive(Serialize)]
struct Dossier {
    rank: usize,
    id: String,
    sequence: String,
    accept_prob: f64,
    scores: BTreeMap<String, f64>,
    descriptors: DescriptorVector,
    closest_known: String,
    alignment_score: f64,
    identity_pct: f64,
    coverage_pct: f64,
}

#[derive(Serialize)]
struct ReportOut {
    funnel: Vec<FunnelRow>,
    non_increasing: bool,
    survivors: usize,
    top: Vec<Dossier>,
}

fn check_same_config(run: &Run, inputs: &[(&str, &Provenance)]) -> Result<()> {
    let want = &run.provenance.config_hash;
    let bad: Vec<String> = inputs
        .iter()
        .filter(|(_, p)| &p.config_hash != want)
        .map(|(n, p)| format!("{n} ({})", p.config_hash))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::config(format!(
            "refusing to mix artifacts: current config {want}, but {} differ",
            bad.join(", ")
        )))
    }
}

pub fn report(run: &mut Run) -> Result<()> {
    let (screen_prov, screened): (Provenance, ScreenOut) = run.read_json(SCREEN_RESULT, "screen")?;
    let (corpus_prov, corpus): (Provenance, CorpusOnly) = run.read_json(CORPUS, "ingest")?;
    check_same_config(run, &[(SCREEN_RESULT, &screen_prov), (CORPUS, &corpus_prov)])?;
    let corpus = corpus.corpus;

    let non_increasing = screened.funnel.windows(2).all(|w| w[1].passed <= w[0].passed && w[1].evaluated <= w[0].evaluated);
    let mut survivors: Vec<&Candidate> =
        screened.audited.iter().filter(|c| screened.survivors.contains(&c.id)).collect();
    let key = |c: &Candidate| c.verdicts.get(Stage::Amp.name()).map(|v| v.score).unwrap_or(c.accept_prob);
    survivors.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.id.cmp(&b.id)));
    survivors.truncate(run.cfg.report.top_k);

    let seqs: Vec<PeptideSequence> = survivors.iter().map(|c| c.sequence.clone()).collect();
    let reference: Vec<PeptideSequence> = corpus.entries.iter().map(|e| e.sequence.clone()).collect();
    let hits = if seqs.is_empty() { Vec::new() } else { novelty_report(&seqs, &reference).data_err("novelty search")? };
    let a = &run.cfg.analysis;
    let top = survivors
        .iter()
        .zip(hits)
        .enumerate()
        .map(|(i, (c, h))| Dossier {
            rank: i + 1,
            id: c.id.clone(),
            sequence: c.sequence.to_string(),
            accept_prob: c.accept_prob,
            scores: c.verdicts.iter().map(|(k, v)| (k.clone(), v.score)).collect(),
            descriptors: descriptors(&c.sequence, a.amidated, a.ph),
            closest_known: h.closest,
            alignment_score: h.alignment.score,
            identity_pct: h.alignment.identity_pct,
            coverage_pct: h.alignment.coverage_pct,
        })
        .collect();
    for r in &screened.funnel {
        log::info!("{:>10}: {:>6} evaluated, {:>6} passed", r.stage, r.evaluated, r.passed);
    }
    let out = ReportOut { funnel: screened.funnel, non_increasing, survivors: screened.survivors.len(), top };
    run.write_json("report.json", &out)?;
    Ok(())
}

#[derive(Deserialize)]
struct CorpusOnly {
    corpus: LabeledCorpus,
}
