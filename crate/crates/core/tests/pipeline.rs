use xmodal_pref_core::data::{
    build_triples, render_instruction, split, subsample, Direction, DispreferredSource, PairRecord, SplitSpec,
};
use xmodal_pref_core::factual::FactualEvaluator;
use xmodal_pref_core::policy::{train_cpo, DecodeMode, TabularBigramPolicy, TrainConfig};
use xmodal_pref_core::textmetrics::{evaluate, EvalPair, MetricConfig};

fn corpus() -> Vec<PairRecord> {
    // no molecule repeats a character, so a bigram table can copy each exactly
    let rows = [
        ("CO", "The molecule is methanol, a primary alcohol."),
        ("C=O", "The molecule is formaldehyde, the simplest aldehyde."),
        ("C#N", "The molecule is hydrogen cyanide, a one-carbon compound."),
        ("CN", "The molecule is methylamine, a primary amine."),
        ("CS", "The molecule is methanethiol, a simple thiol."),
        ("CF", "The molecule is fluoromethane, an organofluorine compound."),
        ("ClC#N", "The molecule is cyanogen chloride, a toxic gas."),
        ("OS", "The molecule is a sulfur oxoacid fragment."),
        ("C=N", "The molecule is methanimine, the simplest imine."),
        ("BrC#N", "The molecule is cyanogen bromide, used in protein chemistry."),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, (m, c))| PairRecord {
            id: format!("m{i}"),
            molecule: m.to_string(),
            caption: c.to_string(),
            category: None,
        })
        .collect()
}

#[test]
fn train_decode_and_score() {
    let records = subsample(&corpus(), 1.0, 3).unwrap();
    let (train, _, test) = split(
        &records,
        &SplitSpec {
            fractions: (0.6, 0.2, 0.2),
            seed: 5,
        },
    )
    .unwrap();
    assert_eq!(train.len() + test.len(), 8);

    let mut triples = Vec::new();
    for dir in Direction::ALL {
        let built = build_triples(
            &train,
            dir,
            &DispreferredSource::FromNoiser {
                seed: 11,
                edit_rate: 0.2,
            },
        )
        .unwrap();
        assert!(built.dropped.is_empty());
        triples.extend(built.triples);
    }
    let cfg = TrainConfig {
        epochs: 200,
        buckets: 512,
        ..TrainConfig::default()
    };
    let (policy, report) = train_cpo(&triples, &[], &cfg).unwrap();
    assert!(report.final_margin > report.initial_margin + 1.0);

    let restored = TabularBigramPolicy::from_json(&policy.to_json().unwrap()).unwrap();
    assert_eq!(restored, policy);

    let decode = |p: &TabularBigramPolicy| -> Vec<EvalPair> {
        train
            .iter()
            .map(|r| {
                let out = p.generate(&render_instruction(r, Direction::Lang2Mol), 64, DecodeMode::Greedy);
                EvalPair::new(r.id.clone(), out, r.molecule.clone())
            })
            .collect()
    };
    let cfg_m = MetricConfig::default();
    let trained = evaluate(&decode(&restored), Direction::Lang2Mol, &cfg_m, 2).unwrap();
    let untrained = evaluate(
        &decode(&TabularBigramPolicy::uniform(policy.vocab().clone(), 512)),
        Direction::Lang2Mol,
        &cfg_m,
        2,
    )
    .unwrap();
    assert_eq!(trained.corpus["exact_match"], 1.0);
    assert_eq!(trained.corpus["validity"], 1.0);
    assert!(untrained.corpus["exact_match"] < 1.0);

    let captions: Vec<(String, String, String)> = test
        .iter()
        .map(|r| (r.id.clone(), r.caption.clone(), r.caption.clone()))
        .collect();
    let factual = FactualEvaluator::mock(2).unwrap().evaluate_corpus(&captions).unwrap();
    assert_eq!((factual.f1, factual.answerability, factual.overlap), (1.0, 1.0, 5.0));
}
