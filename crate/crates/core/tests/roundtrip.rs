use votegraph::data::{label_dataset, read_jsonl, write_jsonl, DatasetSpec, LabelSpec, Source};
use votegraph::election::{utilities_to_ranking, PreferenceProfile, Pscf, RankingProfile, WelfareKind};
use votegraph::eval::accuracy;
use votegraph::models::{
    load_checkpoint, save_checkpoint, DeepSetsConfig, GesnConfig, GevnConfig, InfoSetting, InputKind, Mechanism,
    Model, ModelConfig, Normalization,
};
use votegraph::rules::RuleKind;

/// Recovers each voter's ranking from its ballot and applies a rule.
struct RuleReplay(RuleKind);

impl Mechanism for RuleReplay {
    fn pscf_batch(&self, profiles: &[&PreferenceProfile]) -> votegraph::Result<Vec<Pscf>> {
        profiles
            .iter()
            .map(|p| {
                let rows = (0..p.n()).map(|i| utilities_to_ranking(p.row(i))).collect::<votegraph::Result<Vec<_>>>()?;
                let r = RankingProfile::from_rows(&rows)?;
                Ok(Pscf::one_hot(p.m(), self.0.apply(&r).winner))
            })
            .collect()
    }
}

#[test]
fn jsonl_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for (source, label) in [
        (Source::Dirichlet, LabelSpec::Rule(RuleKind::Stv)),
        (Source::Spatial, LabelSpec::Welfare(WelfareKind::Nash)),
        (Source::Spatial, LabelSpec::None),
    ] {
        let data = label_dataset(&DatasetSpec::validation(source, label, 5).with_count(64)).unwrap();
        let path = dir.path().join("d.jsonl");
        write_jsonl(&data, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(data.len(), back.len());
        for (a, b) in data.iter().zip(&back) {
            let bits = |e: &votegraph::data::LabeledElection| e.utilities().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
            assert_eq!(a.label, b.label);
        }
    }
}

#[test]
fn checkpoints_round_trip_every_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        ModelConfig::Gevn(GevnConfig::SMALL),
        ModelConfig::Gesn(GesnConfig::new(InfoSetting::Results, Normalization::spatial_range())),
        ModelConfig::Gesn(GesnConfig::new(InfoSetting::Private, Normalization::Budget { a: 2.0 })),
        ModelConfig::Deepsets(DeepSetsConfig::new(5)),
    ];
    for (k, config) in configs.into_iter().enumerate() {
        let model = Model::build(config, 40 + k as u64).unwrap();
        let path = dir.path().join(format!("m{k}.ckpt.json"));
        save_checkpoint(&path, &model, Some(InputKind::Utility)).unwrap();
        let (back, input) = load_checkpoint(&path).unwrap();
        assert_eq!(input, Some(InputKind::Utility));
        assert_eq!(back.config(), config);
        assert_eq!(back.params().fingerprint(), model.params().fingerprint());
    }
}

#[test]
fn label_replaying_oracle_scores_perfectly() {
    for rule in RuleKind::ALL {
        let data = label_dataset(&DatasetSpec::test(Source::Dirichlet, LabelSpec::Rule(rule), 9).with_count(128)).unwrap();
        for input in [InputKind::Ranking, InputKind::Utility] {
            assert_eq!(accuracy(&RuleReplay(rule), &data, input).unwrap(), 1.0, "{rule} {input:?}");
        }
    }
}
