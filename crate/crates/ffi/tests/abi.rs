use std::ffi::{CStr, CString};
use std::ptr;

use concept_gauge_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = cg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn correlations_and_alpha() {
    let x = [1.0, 2.0, 3.0];
    let y = [1.0, 2.0, 4.0];
    let mut r = 0.0;
    unsafe {
        assert_eq!(cg_pearson(x.as_ptr(), y.as_ptr(), 3, &mut r), CgStatus::Ok);
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-15);
        assert_eq!(cg_spearman(x.as_ptr(), y.as_ptr(), 3, &mut r), CgStatus::Ok);
        assert_eq!(r, 1.0);
        let flat = [2.0; 3];
        assert_eq!(cg_pearson(x.as_ptr(), flat.as_ptr(), 3, &mut r), CgStatus::Undefined);
        assert!(last_error().contains("undefined"));
        assert_eq!(cg_kendall_tau(x.as_ptr(), flat.as_ptr(), 3, &mut r), CgStatus::Ok);
        assert_eq!(r, 0.0);
        // a successful call clears the message
        assert!(cg_last_error_message().is_null());
        assert_eq!(cg_pearson(ptr::null(), y.as_ptr(), 3, &mut r), CgStatus::NullPointer);
        assert_eq!(cg_pearson(x.as_ptr(), y.as_ptr(), 3, ptr::null_mut()), CgStatus::NullPointer);

        let same = [1.0, 4.0, 2.0, 1.0, 4.0, 2.0];
        assert_eq!(cg_cronbach_alpha(same.as_ptr(), 2, 3, &mut r), CgStatus::Ok);
        assert_eq!(r, 1.0);
        assert_eq!(cg_cronbach_alpha(same.as_ptr(), 1, 6, &mut r), CgStatus::InvalidArgument);
    }
}

#[test]
fn concept_handles() {
    unsafe {
        let mut relu = ptr::null_mut();
        let v = [0.0, 2.0];
        assert_eq!(cg_concept_relu_linear(c("r").as_ptr(), v.as_ptr(), 2, 1.0, &mut relu), CgStatus::Ok);
        let h = [5.0, 3.0];
        let mut a = 0.0;
        assert_eq!(cg_concept_activate(relu, h.as_ptr(), 2, &mut a), CgStatus::Ok);
        assert_eq!(a, 7.0);
        let mut moved = [0.0; 2];
        assert_eq!(cg_concept_ablate(relu, h.as_ptr(), 2, moved.as_mut_ptr()), CgStatus::Ok);
        assert_eq!(moved, [5.0, -0.5]);
        assert_eq!(cg_concept_epsilon_add(relu, h.as_ptr(), 2, 0.5, moved.as_mut_ptr()), CgStatus::Ok);
        assert_eq!(moved, [5.0, 3.5]);
        cg_concept_free(relu);
        cg_concept_free(ptr::null_mut());

        let mut bad = ptr::null_mut();
        let zero = [0.0, 0.0];
        assert_eq!(cg_concept_linear(c("z").as_ptr(), zero.as_ptr(), 2, 0.0, &mut bad), CgStatus::InvalidArgument);
        assert!(bad.is_null());
        let bytes = [0xffu8, 0];
        assert_eq!(cg_concept_one_hot(bytes.as_ptr().cast(), 0, &mut bad), CgStatus::InvalidArgument);
        assert!(last_error().contains("UTF-8"));
    }
}

#[test]
fn backend_and_faithfulness() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(cg_backend_open(c("toy:2").as_ptr(), &mut b), CgStatus::Ok);
        let mut info = CgBackendInfo::default();
        assert_eq!(cg_backend_info(b, &mut info), CgStatus::Ok);
        assert_eq!((info.hidden_width, info.vocab_size), (32, 101));

        let mut neuron = ptr::null_mut();
        assert_eq!(cg_concept_one_hot(c("n5").as_ptr(), 5, &mut neuron), CgStatus::Ok);
        let tokens: Vec<u32> = (1..30).collect();
        let mut div = -1.0;
        assert_eq!(cg_faithfulness(b, neuron, c("ABL-Div").as_ptr(), tokens.as_ptr(), tokens.len(), &mut div), CgStatus::Ok);
        assert!(div >= 0.0);
        assert_eq!(cg_faithfulness(b, neuron, c("GRAD-Div").as_ptr(), tokens.as_ptr(), tokens.len(), &mut div), CgStatus::InvalidArgument);
        assert_eq!(cg_faithfulness(b, neuron, c("IN-UCI").as_ptr(), tokens.as_ptr(), tokens.len(), &mut div), CgStatus::InvalidArgument);
        let far = [500u32];
        assert_eq!(cg_faithfulness(b, neuron, c("ABL-Div").as_ptr(), far.as_ptr(), 1, &mut div), CgStatus::Backend);
        cg_concept_free(neuron);
        cg_backend_free(b);

        let mut none = ptr::null_mut();
        assert_eq!(cg_backend_open(c("tcp:127.0.0.1:1").as_ptr(), &mut none), CgStatus::Backend);
        assert_eq!(cg_backend_open(c("gpu:0").as_ptr(), &mut none), CgStatus::Config);
    }
}

#[test]
fn score_table_to_mtmm() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(cg_scores_new(&mut t), CgStatus::Ok);
        let (run, ma, mb) = (c("r"), c("A"), c("B"));
        for (i, s) in [3.0, 1.0, 4.0, 1.5].iter().enumerate() {
            let id = c(&format!("c{i}"));
            for batch in 0..2 {
                let jitter = batch as f64 * 0.1 * i as f64;
                assert_eq!(cg_scores_insert(t, id.as_ptr(), ma.as_ptr(), batch, run.as_ptr(), s + jitter), CgStatus::Ok);
                assert_eq!(cg_scores_insert(t, id.as_ptr(), mb.as_ptr(), batch, run.as_ptr(), -s - jitter), CgStatus::Ok);
            }
        }
        let c0 = c("c0");
        assert_eq!(cg_scores_insert(t, c0.as_ptr(), ma.as_ptr(), 0, run.as_ptr(), 1.0), CgStatus::InvalidArgument);
        assert_eq!(cg_scores_insert(t, c0.as_ptr(), ma.as_ptr(), 5, run.as_ptr(), f64::NAN), CgStatus::InvalidArgument);
        let mut n = 0;
        assert_eq!(cg_scores_len(t, &mut n), CgStatus::Ok);
        assert_eq!(n, 16);

        let mut m = ptr::null_mut();
        assert_eq!(cg_mtmm_build(t, c("B, A").as_ptr(), &mut m), CgStatus::Ok);
        assert_eq!(cg_mtmm_size(m, &mut n), CgStatus::Ok);
        assert_eq!(n, 2);
        let mut v = 0.0;
        assert_eq!(cg_mtmm_get(m, 0, 1, &mut v), CgStatus::Ok);
        assert_eq!(v, -1.0);
        assert_eq!(cg_mtmm_get(m, 1, 1, &mut v), CgStatus::Ok);
        assert!(v > 0.9 && v <= 1.0);
        assert_eq!(cg_mtmm_get(m, 2, 0, &mut v), CgStatus::InvalidArgument);
        cg_mtmm_free(m);

        assert_eq!(cg_mtmm_build(t, c("A,C").as_ptr(), &mut m), CgStatus::Incomplete);
        cg_scores_free(t);
    }
}

#[test]
fn pipeline_from_config_file() {
    use concept_gauge::backend::{ToyConfig, ToyTransformer};
    use concept_gauge::synthetic::{synthetic_concepts, synthetic_corpus, CorpusSpec};

    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let toy = ToyTransformer::new(ToyConfig::with_seed(2));
    let concepts = synthetic_concepts(&toy, 3, 2).unwrap();
    std::fs::write(dir.join("concepts.json"), concept_gauge::concept::concepts_to_json(&concepts).unwrap()).unwrap();
    let docs = synthetic_corpus(&CorpusSpec::new(8, 32, 101, 2)).unwrap();
    concept_gauge::pipeline::write_corpus(std::fs::File::create(dir.join("corpus.ndjson")).unwrap(), &docs).unwrap();
    std::fs::write(
        dir.join("c.toml"),
        "backend = \"toy:2\"\ncorpus = \"corpus.ndjson\"\nconcepts = \"concepts.json\"\nout = \"out\"\nmeasures = [\"ABL-Div\", \"OUT-EmbCos\"]\n[batch]\nn_batches = 2\nsentences_per_batch = 3\ntokens_per_sentence = 16\n",
    )
    .unwrap();
    let path = c(dir.join("c.toml").to_str().unwrap());
    let mut complete = false;
    let status = unsafe { cg_run_pipeline(path.as_ptr(), &mut complete) };
    assert_eq!(status, CgStatus::Ok, "{}", last_error());
    assert!(complete);

    let scores = c(dir.join("out/run/scores.csv").to_str().unwrap());
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { cg_scores_read_csv(scores.as_ptr(), &mut t) }, CgStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { cg_scores_len(t, &mut n) }, CgStatus::Ok);
    assert_eq!(n, 3 * 2 * 2);
    unsafe { cg_scores_free(t) };

    let missing = c(dir.join("nope.toml").to_str().unwrap());
    assert_eq!(unsafe { cg_run_pipeline(missing.as_ptr(), &mut complete) }, CgStatus::Io);
}
