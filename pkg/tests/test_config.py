import pytest

from integrated_cell.config import (
    RunConfig,
    SplitConfig,
    env_overrides,
    load_config,
    merge,
)
from integrated_cell.errors import ConfigError


class TestRunConfig:
    def test_defaults(self):
        c = RunConfig()
        assert (c.corpus.n, c.corpus.n_classes, c.corpus.image_size) == (540, 4, 64)
        assert (c.model.latent_dim, c.model.n_classes, c.model.image_size) == (16, 4, 64)
        assert (c.training.batch_size, c.training.learning_rate) == (32, 2e-4)
        assert (c.training.epochs_reference, c.training.epochs_conditional) == (20, 20)
        assert c.split.train_fraction == 0.95

    def test_model_follows_corpus(self):
        c = RunConfig.from_dict({"corpus": {"n_classes": 10, "image_size": 32}})
        assert (c.model.n_classes, c.model.image_size) == (10, 32)

    def test_round_trip_and_hash(self):
        c = RunConfig.from_dict({"training": {"batch_size": 8}})
        again = RunConfig.from_dict(c.to_dict())
        assert again.content_hash() == c.content_hash()
        assert len(c.content_hash()) == 64
        assert RunConfig().content_hash() != c.content_hash()

    def test_hash_independent_of_key_order(self):
        a = RunConfig.from_dict({"training": {"batch_size": 8, "epochs_reference": 2}})
        b = RunConfig.from_dict({"training": {"epochs_reference": 2, "batch_size": 8}})
        assert a.content_hash() == b.content_hash()

    def test_with_seed(self):
        c = RunConfig().with_seed(11)
        assert c.corpus.seed == c.split.seed == c.training.init_seed == 11
        assert (c.training.shuffle_seed, c.training.prior_seed) == (12, 13)

    def test_dump_and_load(self, tmp_path):
        c = RunConfig.from_dict({"split": {"train_fraction": 0.5}})
        c.dump(tmp_path / "c.yaml")
        assert load_config(tmp_path / "c.yaml", environ={}).content_hash() == c.content_hash()

    @pytest.mark.parametrize("d", [
        {"bogus": {}},
        {"model": {"depth": 3}},
        {"training": {"batch_size": 1}},
        {"split": 3},
    ])
    def test_invalid(self, d):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(d)


class TestOverrides:
    def test_env_parsing(self):
        env = {"ICELL_TRAINING__BATCH_SIZE": "16", "ICELL_MODEL__WIDTH": "1.0", "PATH": "/bin"}
        assert env_overrides(env) == {"training": {"batch_size": 16}, "model": {"width": 1.0}}

    @pytest.mark.parametrize("key", ["ICELL_TRAINING", "ICELL_OPTIM__LR", "ICELL_A__B__C"])
    def test_bad_variable(self, key):
        with pytest.raises(ConfigError):
            env_overrides({key: "1"})

    def test_precedence(self, tmp_path):
        (tmp_path / "c.yaml").write_text("training:\n  batch_size: 8\n  epochs_reference: 3\n")
        c = load_config(tmp_path / "c.yaml", environ={"ICELL_TRAINING__BATCH_SIZE": "4"}, seed=2)
        assert (c.training.batch_size, c.training.epochs_reference) == (4, 3)
        assert c.corpus.seed == 2

    def test_merge_keeps_base(self):
        base = {"training": {"batch_size": 8}}
        out = merge(base, {"training": {"epochs_reference": 1}})
        assert out == {"training": {"batch_size": 8, "epochs_reference": 1}}
        assert base == {"training": {"batch_size": 8}}

    def test_file_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml", environ={})
        (tmp_path / "bad.yaml").write_text("training: [1, 2\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.yaml", environ={})
        (tmp_path / "list.yaml").write_text("- 1\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "list.yaml", environ={})

    def test_split_defaults(self):
        assert SplitConfig() == SplitConfig(train_fraction=0.95, seed=0)
