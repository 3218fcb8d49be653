//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so the lines always print.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use disco::corpus::{bio_violations, parse_conllu, parse_rels, Direction, Document, SegLabel};
use disco::features::{
    compute_all_rel_features, dump_rel_features, dump_seg_features, CorpusFeatureConfig, HeadSide,
    RelFeatureRecord, Stoplist,
};
use disco::harness::{cmd_train, TrainOptions};
use disco::nn::{viterbi, Crf, CrfParams, ParamGroup, ParamStore};
use disco::rel::{
    build_pair_sequence, inject_feature_vector, predict_relations, train_rel_classifier, FeatureEncoder,
    FeatureLayout, FeatureMode, RelConfig,
};
use disco::scoring::{aggregate_runs, f1, score_boundary_labels, score_connectives, score_segmentation, ConnectiveMatch};
use disco::seg::{
    predict_segments, sequence_loss, train_segmenter, DecodeMode, SegModel, SegTask, SegTrainer, TrainingConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1

fn pair_sequences() -> Outcome {
    let inst = |u1: &str, u2: &str, dir: &str| disco::corpus::RelationInstance {
        doc_id: "d".into(),
        unit1_spans: vec![(1, 1)],
        unit2_spans: vec![(2, 2)],
        unit1_text: u1.into(),
        unit2_text: u2.into(),
        unit1_sent_text: u1.into(),
        unit2_sent_text: u2.into(),
        direction: Direction::parse(dir).unwrap(),
        label: "x".into(),
    };
    let cases = [
        (inst("do we start ?", "no", "1>2"), "[CLS] } do we start ? > [SEP] no [SEP]"),
        (inst("thanks", "im ok", "1<2"), "[CLS] thanks [SEP] < im ok { [SEP]"),
    ];
    for (i, want) in &cases {
        let got = build_pair_sequence(i).map_err(|e| e.to_string())?.text();
        check(got == *want, || format!("got {got:?}, want {want:?}"))?;
    }
    Ok("2/2 byte-exact".into())
}

// 2

fn all_paths(len: usize, k: usize) -> Vec<Vec<usize>> {
    (0..k.pow(len as u32))
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let t = code % k;
                    code /= k;
                    t
                })
                .collect()
        })
        .collect()
}

fn path_score(em: &[Vec<f64>], p: &CrfParams, path: &[usize]) -> f64 {
    let mut s = p.start[path[0]] + em[0][path[0]];
    for t in 1..path.len() {
        s += p.transitions[path[t - 1]][path[t]] + em[t][path[t]];
    }
    s + p.end[path[path.len() - 1]]
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

fn t2(m: &[Vec<f64>]) -> Tensor {
    let (r, c) = (m.len(), m[0].len());
    Tensor::from_vec(m.concat(), (r, c), &Device::Cpu).unwrap()
}

fn t1(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec(), v.len(), &Device::Cpu).unwrap()
}

fn crf_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0f64;
    for case in 0..1000 {
        let len = rng.random_range(1..=6);
        let k = rng.random_range(1..=4);
        let em = random_matrix(&mut rng, len, k);
        let p = CrfParams {
            transitions: random_matrix(&mut rng, k, k),
            start: random_matrix(&mut rng, 1, k).remove(0),
            end: random_matrix(&mut rng, 1, k).remove(0),
        };
        let scored: Vec<(f64, Vec<usize>)> = all_paths(len, k)
            .into_iter()
            .map(|path| (path_score(&em, &p, &path), path))
            .collect();
        let best = scored
            .iter()
            .fold(None::<&(f64, Vec<usize>)>, |b, x| match b {
                Some(b) if b.0 >= x.0 => Some(b),
                _ => Some(x),
            })
            .unwrap();
        let got = viterbi(&em, &p);
        check(got == best.1, || format!("case {case}: viterbi {got:?}, exhaustive {:?}", best.1))?;

        let max = best.0;
        let brute = max + scored.iter().map(|(s, _)| (s - max).exp()).sum::<f64>().ln();
        let crf = Crf::from_tensors(t2(&p.transitions), t1(&p.start), t1(&p.end)).unwrap();
        let emissions = t2(&em).unsqueeze(0).unwrap();
        let mask = Tensor::ones((1, len), DType::F64, &Device::Cpu).unwrap();
        let z = crf.log_partition(&emissions, &mask).unwrap().to_vec1::<f64>().unwrap()[0];
        worst = worst.max((z - brute).abs());
        check((z - brute).abs() <= 1e-6, || format!("case {case}: log Z {z} vs {brute}"))?;
    }
    Ok(format!("1000 instances, max |dlogZ| {worst:.2e}"))
}

// 3

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dev = Device::Cpu;
    let mut worst = 0f64;
    for case in 0..50 {
        let n = rng.random_range(1..=5);
        let k = rng.random_range(2..=4);
        let mode = if case % 2 == 0 { DecodeMode::Linear } else { DecodeMode::Crf };
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        // emissions, transitions, start, end flattened
        let mut params: Vec<Vec<f64>> = vec![
            random_matrix(&mut rng, n, k).concat(),
            random_matrix(&mut rng, k, k).concat(),
            random_matrix(&mut rng, 1, k).concat(),
            random_matrix(&mut rng, 1, k).concat(),
        ];
        let shapes = [vec![n, k], vec![k, k], vec![k], vec![k]];
        let loss_of = |vals: &[Vec<f64>]| -> f64 {
            let ts: Vec<Tensor> = vals
                .iter()
                .zip(&shapes)
                .map(|(v, s)| Tensor::from_vec(v.clone(), s.as_slice(), &dev).unwrap())
                .collect();
            let crf = Crf::from_tensors(ts[1].clone(), ts[2].clone(), ts[3].clone()).unwrap();
            sequence_loss(&ts[0], &gold, mode, Some(&crf)).unwrap().to_scalar::<f64>().unwrap()
        };

        let vars: Vec<Var> = params
            .iter()
            .zip(&shapes)
            .map(|(v, s)| Var::from_tensor(&Tensor::from_vec(v.clone(), s.as_slice(), &dev).unwrap()).unwrap())
            .collect();
        let crf =
            Crf::from_tensors(vars[1].as_tensor().clone(), vars[2].as_tensor().clone(), vars[3].as_tensor().clone())
                .unwrap();
        let loss = sequence_loss(vars[0].as_tensor(), &gold, mode, Some(&crf)).unwrap();
        let grads = loss.backward().unwrap();

        let h = 1e-5;
        for (pi, var) in vars.iter().enumerate() {
            let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
                Some(g) => g.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
                None => vec![0.0; params[pi].len()],
            };
            for j in 0..params[pi].len() {
                let orig = params[pi][j];
                params[pi][j] = orig + h;
                let up = loss_of(&params);
                params[pi][j] = orig - h;
                let down = loss_of(&params);
                params[pi][j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let e = rel_err(analytic[j], numeric);
                worst = worst.max(e);
                check(e <= 1e-4, || {
                    format!("case {case} ({mode:?}) param {pi}[{j}]: analytic {} numeric {numeric}", analytic[j])
                })?;
            }
        }
    }
    Ok(format!("50 instances, max relative error {worst:.2e}"))
}

// 4

fn seg_config(mode: DecodeMode) -> TrainingConfig {
    let mut c = TrainingConfig::new("random:2x64", mode);
    c.lr_encoder = 1e-4;
    c.lr_other = 1e-3;
    c.epochs = 10;
    c.batch_size = 16;
    c.seed = 1;
    c.patience = Some(2);
    c
}

fn table_checksum(t: &Tensor) -> String {
    let v = t.flatten_all().unwrap().to_dtype(DType::F32).unwrap().to_vec1::<f32>().unwrap();
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    hex::encode(Sha256::digest(&bytes))
}

fn encoder_values(ps: &ParamStore) -> Vec<f32> {
    ps.vars(ParamGroup::Encoder)
        .iter()
        .flat_map(|v| v.as_tensor().flatten_all().unwrap().to_dtype(DType::F32).unwrap().to_vec1::<f32>().unwrap())
        .collect()
}

fn frozen_embeddings() -> Outcome {
    let s = common::seg_corpus(200, 7);
    let model = SegModel::build(&s.train, &s.dev, SegTask::Seg, &seg_config(DecodeMode::Linear), None)
        .map_err(|e| e.to_string())?;
    let before = table_checksum(model.static_table().ok_or("model has no static table")?);
    let enc_before = encoder_values(model.params());
    let mut trainer = SegTrainer::new(model, &s.train).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        trainer.step().map_err(|e| e.to_string())?;
    }
    let model = trainer.into_model();
    let after = table_checksum(model.static_table().unwrap());
    check(before == after, || format!("static table checksum changed: {before} -> {after}"))?;
    let enc_after = encoder_values(model.params());
    check(!enc_before.is_empty() && enc_before.len() == enc_after.len(), || "encoder parameters missing".into())?;
    let moved = enc_before.iter().zip(&enc_after).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
    check(moved > 0.0, || "encoder parameters unchanged after 100 steps".into())?;
    Ok(format!("checksum {} stable; encoder max |delta| {moved:.2e}", &before[..12]))
}

// 5

fn synthetic_segmentation() -> Outcome {
    let s = common::seg_corpus(200, 7);
    let t = train_segmenter(&s.train, &s.dev, SegTask::Seg, &seg_config(DecodeMode::Linear), None)
        .map_err(|e| e.to_string())?;
    let pred = predict_segments(&s.test, &t.model).map_err(|e| e.to_string())?;
    let f = score_segmentation(&s.test, &pred).map_err(|e| e.to_string())?.f1.unwrap_or(0.0);
    check(t.log.len() <= 10, || "more than 10 epochs".into())?;
    check(f >= 0.95, || format!("test F1 {f:.4} < 0.95"))?;
    Ok(format!("test F1 {f:.4} after {} epoch(s)", t.log.len()))
}

// 6

fn synthetic_connectives() -> Outcome {
    let s = common::conn_corpus(200, 7);
    let t = train_segmenter(&s.train, &s.dev, SegTask::Conn, &seg_config(DecodeMode::Crf), None)
        .map_err(|e| e.to_string())?;
    let pred = predict_segments(&s.test, &t.model).map_err(|e| e.to_string())?;
    let f = score_connectives(&s.test, &pred, ConnectiveMatch::Token)
        .map_err(|e| e.to_string())?
        .f1
        .unwrap_or(0.0);
    let violations: usize = pred.iter().map(|d| bio_violations(&d.labels()).len()).sum();
    check(f >= 0.90, || format!("test F1 {f:.4} < 0.90"))?;
    check(violations == 0, || format!("{violations} BIO violation(s)"))?;
    Ok(format!("test F1 {f:.4}, 0 BIO violations, {} epoch(s)", t.log.len()))
}

// 7

fn synthetic_relations() -> Outcome {
    let s = common::rel_corpus(200, 7);
    let run = |mode: FeatureMode| -> Result<f64, String> {
        let mut c = RelConfig::new("random:2x64");
        c.lr_encoder = 2e-4;
        c.lr_other = 2e-3;
        c.epochs = 20;
        c.seed = 1;
        c.features = Some(vec!["direction".into(), "lexical_overlap".into()]);
        c.feature_mode = mode;
        let t = train_rel_classifier(&s.train, &s.dev, &s.docs, "eng.rst.syn", &c, None).map_err(|e| e.to_string())?;
        let p = predict_relations(&t.model, &s.test, &s.docs).map_err(|e| e.to_string())?;
        Ok(p.iter().zip(&s.test).filter(|(p, i)| p.label == i.label).count() as f64 / s.test.len() as f64)
    };
    let with = run(FeatureMode::Inject)?;
    let without = run(FeatureMode::Skip)?;
    check(with >= 0.90, || format!("accuracy with features {with:.4} < 0.90"))?;
    check(with - without >= 0.10, || format!("feature gain {:.4} < 0.10 ({with:.4} vs {without:.4})", with - without))?;
    Ok(format!("accuracy {with:.4} with features, {without:.4} without"))
}

// 8

fn scorer_hand_cases() -> Outcome {
    for (p, r) in [(0.5, 0.5), (1.0, 1.0), (0.2, 0.8)] {
        let want = 2.0 * p * r / (p + r);
        check((f1(p, r) - want).abs() <= 1e-12, || format!("f1({p}, {r}) = {}", f1(p, r)))?;
    }
    check(f1(0.7, 0.7) == 0.7, || "f1(p, p) != p".into())?;
    // 4 gold boundaries, 5 predicted, 3 shared
    use SegLabel::{BeginSeg as B, None as O};
    let gold = [B, O, B, O, B, O, B, O, O, O];
    let pred = [B, B, B, O, B, O, O, B, O, O];
    let rep = score_boundary_labels(&gold, &pred);
    let (p, r, f) = (rep.precision.unwrap(), rep.recall.unwrap(), rep.f1.unwrap());
    check((p - 0.6).abs() <= 1e-12 && (r - 0.75).abs() <= 1e-12 && (f - 2.0 / 3.0).abs() <= 1e-12, || {
        format!("P {p} R {r} F {f}")
    })?;
    let (mean, sd) = aggregate_runs(&[90.0, 92.0, 94.0, 96.0, 98.0]).map_err(|e| e.to_string())?;
    check(mean == 94.0 && sd == 10f64.sqrt(), || format!("aggregate ({mean}, {sd})"))?;
    Ok("F1 identity, P=0.6/R=0.75/F=2/3, (94, sqrt 10)".into())
}

// 9

fn golden_features() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden");
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).map_err(|e| format!("{f}: {e}"));
    let docs = parse_conllu(&read("mini.conllu")?).map_err(|e| e.to_string())?;
    let rels = parse_rels(&read("mini.rels")?).map_err(|e| e.to_string())?;
    let seg = dump_seg_features(&docs);
    let records = compute_all_rel_features(&rels, &docs, &Stoplist::for_language("eng"), HeadSide::default())
        .map_err(|e| e.to_string())?;
    let rel = dump_rel_features(&rels, &records);
    for (name, got) in [("seg_features.tsv", &seg), ("rel_features.tsv", &rel)] {
        let want = read(name)?;
        if *got != want {
            let line = got.lines().zip(want.lines()).position(|(a, b)| a != b);
            return Err(format!("{name} differs at line {:?}", line.map(|l| l + 1)));
        }
    }
    let n_tok: usize = docs.iter().map(Document::token_count).sum();
    Ok(format!("{n_tok} token rows, {} relation rows byte-identical", rels.len()))
}

// 10

fn random_record(rng: &mut ChaCha8Rng) -> RelFeatureRecord {
    let genres = ["news", "blog", "fiction", "whow"];
    RelFeatureRecord {
        genre: Some(genres[rng.random_range(0..genres.len())].to_string()),
        children_u1: rng.random_range(0..5),
        children_u2: rng.random_range(0..5),
        discontinuous_u1: rng.random_bool(0.2),
        discontinuous_u2: rng.random_bool(0.2),
        is_sentence_u1: rng.random_bool(0.5),
        is_sentence_u2: rng.random_bool(0.5),
        length_ratio: rng.random_range(0.1..10.0),
        same_speaker: if rng.random_bool(0.5) { Some(rng.random_bool(0.5)) } else { None },
        doc_length: rng.random_range(10..2000),
        position_u1: rng.random_range(0.0..1.0),
        position_u2: rng.random_range(0.0..1.0),
        distance: rng.random_range(0..30),
        lexical_overlap: rng.random_range(0..6),
        direction: if rng.random_bool(0.5) { Direction::LeftToRight } else { Direction::RightToLeft },
    }
}

fn injection_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let menu = [
        "direction",
        "genre",
        "children",
        "discontinuous",
        "is_sentence",
        "length_ratio",
        "same_speaker",
        "doc_length",
        "position",
        "distance",
        "lexical_overlap",
    ];
    let dev = Device::Cpu;
    for case in 0..100 {
        let b = rng.random_range(1..4);
        let l = rng.random_range(1..12);
        let h = 64;
        let names: Vec<&str> = menu.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        let train: Vec<RelFeatureRecord> = (0..20).map(|_| random_record(&mut rng)).collect();
        let config = CorpusFeatureConfig::from_names(&names).map_err(|e| e.to_string())?;
        let layout = FeatureLayout::build(&config, &train, h).map_err(|e| e.to_string())?;
        let width = layout.width();
        let mut ps = ParamStore::new(case, DType::F32);
        let enc = FeatureEncoder::new(&mut ps, layout).map_err(|e| e.to_string())?;
        let recs: Vec<RelFeatureRecord> = (0..b).map(|_| random_record(&mut rng)).collect();
        let refs: Vec<&RelFeatureRecord> = recs.iter().collect();
        let fvec = enc.encode(&refs, &ps).map_err(|e| e.to_string())?;
        let fv = fvec.to_vec2::<f32>().unwrap();
        for row in &fv {
            check(row[width..].iter().all(|&x| x == 0.0), || format!("case {case}: nonzero beyond width {width}"))?;
        }

        let emb: Vec<f32> = (0..b * l * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let embedded = Tensor::from_vec(emb, (b, l, h), &dev).unwrap();
        let lens: Vec<usize> = (0..b).map(|_| rng.random_range(1..=l)).collect();
        let mask_v: Vec<f32> = lens.iter().flat_map(|&n| (0..l).map(move |i| f32::from(i < n))).collect();
        let mask = Tensor::from_vec(mask_v, (b, l), &dev).unwrap();
        let (seq, new_mask) = inject_feature_vector(&embedded, &mask, &fvec).map_err(|e| e.to_string())?;
        check(seq.dims3().unwrap() == (b, l + 1, h), || format!("case {case}: shape {:?}", seq.dims()))?;
        let orig = embedded.to_vec3::<f32>().unwrap();
        let got = seq.to_vec3::<f32>().unwrap();
        let m_old = mask.to_vec2::<f32>().unwrap();
        let m_new = new_mask.to_vec2::<f32>().unwrap();
        for i in 0..b {
            let same_bits = |x: &[f32], y: &[f32]| x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits());
            check(same_bits(&got[i][0], &orig[i][0]), || format!("case {case}: [CLS] row changed"))?;
            check(same_bits(&got[i][1], &fv[i]), || format!("case {case}: injected row differs"))?;
            for j in 1..l {
                check(same_bits(&got[i][j + 1], &orig[i][j]), || format!("case {case}: row {j} changed"))?;
            }
            let mut want = vec![m_old[i][0], 1.0];
            want.extend_from_slice(&m_old[i][1..]);
            check(m_new[i] == want, || format!("case {case}: mask {:?} vs {want:?}", m_new[i]))?;
        }
    }
    Ok("100 instances".into())
}

// 11

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = common::seg_corpus(40, 11);
    for (name, docs) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
        common::write(&tmp.path().join(format!("eng.rst.syn_{name}.conllu")), &common::conllu_text(docs));
    }
    let config = serde_json::json!({
        "corpus": "eng.rst.syn",
        "task": "seg",
        "encoder_name": "random:2x64",
        "train": "eng.rst.syn_train.conllu",
        "dev": "eng.rst.syn_dev.conllu",
        "test": "eng.rst.syn_test.conllu",
        "runs": 1,
        "training": {"lr_encoder": 1e-4, "lr_other": 1e-3, "epochs": 2, "lstm_hidden": 32}
    });
    let config_path = tmp.path().join("config.json");
    common::write(&config_path, &config.to_string());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let opts = TrainOptions {
            seed: Some(1),
            output_dir: Some(tmp.path().join(run)),
            ..Default::default()
        };
        let summary = cmd_train(&config_path, &opts).map_err(|e| e.to_string())?;
        let pred = summary.runs[0].predictions.clone().ok_or("no prediction file")?;
        outputs.push(std::fs::read(&pred).map_err(|e| e.to_string())?);
    }
    check(!outputs[0].is_empty() && outputs[0] == outputs[1], || "prediction files differ".into())?;
    Ok(format!("{} bytes identical", outputs[0].len()))
}

fn main() {
    // single-threaded kernels for the determinism check
    std::env::set_var("RAYON_NUM_THREADS", "1");
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("pair-sequence fidelity", pair_sequences),
        ("CRF oracle equivalence", crf_oracle),
        ("gradient check", gradient_check),
        ("frozen-embedding invariant", frozen_embeddings),
        ("synthetic segmentation", synthetic_segmentation),
        ("synthetic connective detection", synthetic_connectives),
        ("synthetic relation classification", synthetic_relations),
        ("scorer hand cases", scorer_hand_cases),
        ("feature golden files", golden_features),
        ("injection contract", injection_contract),
        ("determinism", determinism),
    ];
    let limits = [1, 60, 60, 300, 600, 600, 900, 60, 60, 60, 600].map(Duration::from_secs);
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, ((name, f), limit)) in criteria.iter().zip(limits).enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|x| *x == n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > limit => Err(format!("{d}; took {took:.1?}, limit {limit:?}")),
            r => r,
        };
        match result {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail}; {took:.1?})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({detail}; {took:.1?})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
