use balancelab::balancing::{BalanceSpec, Mechanism, Target};
use balancelab::cbn::templates::GraphId;
use balancelab::datagen::{generate, ideal_testset, Dataset, DatasetMeta, GenSpec};
use balancelab::learner::{train, ModelParams, TrainSpec};
use balancelab::metrics::evaluate;
use balancelab::propcheck::suite::{self, VerifyOptions, IDS};

#[test]
fn saved_dataset_trains_to_the_same_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    let spec = GenSpec {
        n: 1_500,
        ..GenSpec::for_graph(GraphId::C)
    };
    let data = generate(&spec).unwrap();
    let balanced = data
        .balance(&BalanceSpec::new(Target::joint("Y", "Z"), Mechanism::ImportanceWeights, None).unwrap())
        .unwrap();
    let meta = DatasetMeta {
        kind: "train".into(),
        spec: Some(spec.clone()),
        channels: balanced.channels().to_vec(),
        conditional: None,
        config_hash: None,
    };
    balanced.save(&path, &meta).unwrap();
    let (loaded, m) = Dataset::load(&path).unwrap();
    assert_eq!(m, meta);
    assert_eq!(loaded, balanced);

    let tspec = TrainSpec {
        epochs: 4,
        ..TrainSpec::default()
    };
    let (a, _) = train(&balanced, &tspec).unwrap();
    let (b, _) = train(&loaded, &tspec).unwrap();
    assert_eq!(a, b);
    let text = ModelParams::from_text(&a.to_text()).unwrap();
    let ideal = ideal_testset(&spec, 800, 1).unwrap();
    assert_eq!(evaluate(&a, &ideal, 0.5).unwrap(), evaluate(&text, &ideal, 0.5).unwrap());
}

#[test]
fn every_verification_id_runs() {
    for id in IDS {
        let o = suite::run(id, &VerifyOptions { seed: 0, grid: Some(11) }).unwrap();
        assert_eq!(o.expectation_met, *id != "prop4-C4", "{id}: {}", o.report);
    }
}
