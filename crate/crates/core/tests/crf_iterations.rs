use tablegraph::eval::{evaluate, EvalConfig};
use tablegraph::pipeline::{fit_prepared, predict_pages, prepare_pages, LearnerConfig, ModelKind};
use tablegraph::synthgen::{generate_dataset, SynthConfig};

#[test]
fn more_subgradient_iterations_tag_better() {
    let (data, gold) = generate_dataset(&SynthConfig::writers(), 24, 8).unwrap();
    let (train, test) = data.pages.split_at(16);
    let base = LearnerConfig::new(ModelKind::Crf).with_seed(3);
    let prepared = prepare_pages(train, &base.graph, base.edge_features);
    let accuracy = |iterations| {
        let mut cfg = base.clone();
        cfg.crf.iterations = iterations;
        let (model, summary) = fit_prepared(&prepared, &cfg).unwrap();
        let tagged = predict_pages(&model, test).unwrap();
        let report = evaluate(&tagged, Some(&gold[16..]), &EvalConfig::default()).unwrap();
        (report.accuracy, summary.objective.unwrap())
    };
    let (short, short_obj) = accuracy(100);
    let (long, long_obj) = accuracy(1500);
    assert!(long_obj <= short_obj, "objective {long_obj} vs {short_obj}");
    assert!(
        long > short,
        "1500 iterations {long:.4} vs 100 iterations {short:.4}"
    );
}
