import json
import os

import numpy as np
import pandas as pd
import pytest
import yaml

from cli.config import ConfigError, PipelineConfig, apply_overrides, config_from_dict, load_config
from main import main


CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'data', 'configs')


TINY = {
    'alignment': {'batch_size': 32, 'epochs': 3, 'hidden': 16, 'out_dim': 8, 'r_b': 15.0, 'r_a': 30.0,
                  'learning_rate': '1e-2'},
    'task_head': {'hidden': 0, 'max_epochs': 30},
    'sweep': {'lambdas': [0.0, 0.5]},
    'synth': {'grid_size': 32, 'n_pois': 120, 'n_regions': 10, 'K': 3, 'n_luc': 60, 'd_t': 16,
              'region_radius': 60.0, 'hermetic': True},
    'seeds': [0, 1],
    'threads': 2,
}


def write_config(directory, name='config.yaml', **changes):
    raw = {section: dict(values) if isinstance(values, dict) else values for section, values in TINY.items()}
    for section, values in changes.items():
        if isinstance(values, dict):
            raw.setdefault(section, {}).update(values)
        else:
            raw[section] = values
    path = os.path.join(str(directory), name)
    with open(path, 'w') as f:
        yaml.safe_dump(raw, f)
    return path


def run_chain(config, out_dir, *commands):
    for command in commands:
        assert main(['--config', config, '--out-dir', out_dir] + list(command)) == 0, command


@pytest.fixture(scope='module')
def pipeline(tmp_path_factory):
    """synth, pretrain and embed on the tiny world; returns (config path, output dir)"""
    root = tmp_path_factory.mktemp('pipeline')
    config = write_config(root)
    out = str(root / 'out')
    run_chain(config, out, ['synth'], ['pretrain'], ['embed'])
    return config, out


# --- configuration ---

def test_defaults_are_the_reference_setup():
    cfg = load_config(None)
    assert (cfg.alignment.lam, cfg.alignment.batch_size, cfg.alignment.epochs) == (0.2, 512, 100)
    assert cfg.seeds == [0, 1, 2, 3, 4]
    assert cfg.path('field') == os.path.join('out', 'synth', 'field.aef')
    assert cfg.path('checkpoint') == os.path.join('out', 'pretrain', 'best.aeth')


def test_shipped_configs_load():
    for name in ('default.yaml', 'smoke.yaml'):
        cfg = load_config(os.path.join(CONFIG_DIR, name)).validate()
        assert cfg.alignment.tau_poi == 0.07
    assert load_config(os.path.join(CONFIG_DIR, 'smoke.yaml')).synth.hermetic is True


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match='alignment.temperature'):
        config_from_dict({'alignment': {'temperature': 0.1}})
    with pytest.raises(ConfigError, match='model'):
        config_from_dict({'model': {}})


def test_values_are_cast_to_field_types():
    cfg = config_from_dict({'alignment': {'learning_rate': '1e-3', 'epochs': 5.0}})
    assert cfg.alignment.learning_rate == 1e-3
    assert isinstance(cfg.alignment.epochs, int)
    with pytest.raises(ConfigError, match='alignment.use_augmented'):
        config_from_dict({'alignment': {'use_augmented': 'yes'}})
    with pytest.raises(ConfigError, match='alignment.batch_size'):
        config_from_dict({'alignment': {'batch_size': 12.5}})


def test_validation_wraps_section_errors():
    with pytest.raises(ConfigError, match=r'\[0, 1\)'):
        config_from_dict({'alignment': {'lam': 1.0}}).validate()
    with pytest.raises(ConfigError, match='grid_size'):
        config_from_dict({'synth': {'grid_size': 8}}).validate()


def test_overrides():
    cfg = apply_overrides(PipelineConfig(), seed=9, threads=3, out_dir='elsewhere')
    assert cfg.alignment.seed == 9 and cfg.synth.seed == 9
    assert cfg.threads == 3
    assert cfg.synth_dir == os.path.join('elsewhere', 'synth')


def test_require_reports_missing_file(tmp_path):
    cfg = apply_overrides(PipelineConfig(), out_dir=str(tmp_path))
    with pytest.raises(ConfigError, match='paths.pois: file not found'):
        cfg.require('pois')


# --- commands ---

def test_synth_prints_manifest(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(['--config', config, '--out-dir', str(tmp_path / 'out'), 'synth']) == 0
    manifest = str(tmp_path / 'out' / 'synth' / 'manifest.json')
    assert capsys.readouterr().out.strip() == manifest
    assert os.path.exists(manifest)


def test_bad_synth_config_exits_nonzero(tmp_path, caplog):
    config = write_config(tmp_path, synth={'grid_size': 8})
    assert main(['--config', config, '--out-dir', str(tmp_path), 'synth']) == 1
    assert 'grid_size' in caplog.text


def test_pretrain_outputs(pipeline):
    _, out = pipeline
    ckpt_dir = os.path.join(out, 'pretrain')
    for name in ('best.aeth', 'best.aeth.state.npz', 'best.aeth.json', 'training_log.csv', 'training_curve.png'):
        assert os.path.exists(os.path.join(ckpt_dir, name)), name
    log = pd.read_csv(os.path.join(ckpt_dir, 'training_log.csv'))
    assert len(log) == 3
    with open(os.path.join(ckpt_dir, 'best.aeth.json')) as f:
        sidecar = json.load(f)
    assert sidecar['alignment']['r_b'] == 15.0
    assert log.loc[log['is_best'] == 1, 'epoch'].item() == sidecar['best_epoch']
    assert sidecar['n_pairs'] == 120


def test_empty_poi_file_exits_nonzero(pipeline, tmp_path, caplog):
    _, out = pipeline
    empty = tmp_path / 'pois.csv'
    empty.write_text('')
    config = write_config(tmp_path, paths={'field': os.path.join(out, 'synth', 'field.aef'), 'pois': str(empty),
                                           'text': os.path.join(out, 'synth', 'text.tev')})
    assert main(['--config', config, '--out-dir', str(tmp_path), 'pretrain', '--no-plots']) == 1
    assert 'not a readable POI CSV' in caplog.text


def test_lambda_one_rejected(tmp_path, caplog):
    config = write_config(tmp_path, alignment={'lam': 1.0})
    assert main(['--config', config, '--out-dir', str(tmp_path), 'pretrain']) == 1
    assert '[0, 1)' in caplog.text


def test_embed_outputs(pipeline):
    _, out = pipeline
    luc = pd.read_csv(os.path.join(out, 'embeddings', 'luc_aligned.csv'))
    assert len(luc) == 60
    assert luc['region_id'].tolist()[:3] == [1, 2, 3]
    assert len([c for c in luc.columns if c.startswith('e')]) == 8
    vectors = luc[[c for c in luc.columns if c.startswith('e')]].to_numpy()
    np.testing.assert_allclose(np.linalg.norm(vectors, axis=1), 1.0, atol=1e-6)

    raw = pd.read_csv(os.path.join(out, 'embeddings', 'sdm_raw.csv'))
    assert len(raw) == 10
    assert len([c for c in raw.columns if c.startswith('e')]) == 64


def test_embed_without_checkpoint(tmp_path, caplog):
    config = write_config(tmp_path)
    out = str(tmp_path / 'out')
    run_chain(config, out, ['synth'])
    assert main(['--config', config, '--out-dir', out, 'embed']) == 1
    assert 'paths.checkpoint: file not found' in caplog.text


def test_eval_reports_both_embeddings(pipeline):
    config, out = pipeline
    run_chain(config, out, ['eval', '--task', 'luc'], ['eval', '--task', 'sdm', '--scaled'])
    luc = pd.read_csv(os.path.join(out, 'eval', 'luc_report.csv'))
    assert sorted(set(luc['embedding'])) == ['aligned', 'raw_ae']
    assert set(luc['metric']) == {'f1', 'precision', 'recall'}
    assert (luc['n_seeds'] == 2).all()
    sdm = pd.read_csv(os.path.join(out, 'eval', 'sdm_report_scaled.csv'))
    assert set(sdm['metric']) == {'kl', 'l1', 'chebyshev'}
    assert (sdm['std'] >= 0).all()


def test_eval_single_seed_has_zero_std(pipeline, tmp_path):
    config, out = pipeline
    single = write_config(tmp_path, seeds=[3])
    block = 'mine=' + os.path.join(out, 'embeddings', 'luc_aligned.csv')
    run_chain(single, out, ['eval', '--task', 'luc', '--embeddings', block])
    report = pd.read_csv(os.path.join(out, 'eval', 'luc_report.csv'))
    assert report['embedding'].unique().tolist() == ['mine']
    assert (report['std'] == 0).all()


def test_eval_rejects_malformed_block(pipeline, caplog):
    config, out = pipeline
    assert main(['--config', config, '--out-dir', out, 'eval', '--task', 'luc', '--embeddings', 'nolabel']) == 1
    assert 'LABEL=PATH' in caplog.text


def test_unknown_axis_is_a_usage_error(pipeline):
    config, out = pipeline
    with pytest.raises(SystemExit) as exc:
        main(['--config', config, '--out-dir', out, 'sweep', '--axis', 'temperature'])
    assert exc.value.code == 2


def test_sweep_writes_one_row_per_setting(pipeline):
    config, out = pipeline
    run_chain(config, out, ['sweep', '--axis', 'lambda'])
    frame = pd.read_csv(os.path.join(out, 'sweep', 'sweep_lambda.csv'))
    assert frame['lambda'].tolist() == [0.0, 0.5]
    assert (frame['status'] == 'ok').all()
    assert os.path.exists(os.path.join(out, 'sweep', 'sweep_lambda.png'))


def test_sweep_with_failed_setting_exits_nonzero(pipeline, tmp_path):
    _, out = pipeline
    config = write_config(tmp_path, sweep={'lambdas': [1.0]})
    assert main(['--config', config, '--out-dir', out, 'sweep', '--axis', 'lambda', '--no-plots']) == 1
    frame = pd.read_csv(os.path.join(out, 'sweep', 'sweep_lambda.csv'))
    assert frame['status'].iloc[0].startswith('failed')


def test_resume_matches_uninterrupted_run(pipeline, tmp_path):
    _, out = pipeline
    bundle = {name: os.path.join(out, 'synth', f) for name, f in
              (('field', 'field.aef'), ('pois', 'pois.csv'), ('text', 'text.tev'))}
    full = write_config(tmp_path, 'full.yaml', alignment={'epochs': 4},
                        paths={**bundle, 'checkpoint': str(tmp_path / 'full' / 'model.aeth')})
    short = write_config(tmp_path, 'short.yaml', alignment={'epochs': 2},
                         paths={**bundle, 'checkpoint': str(tmp_path / 'part' / 'model.aeth')})
    rest = write_config(tmp_path, 'rest.yaml', alignment={'epochs': 4},
                        paths={**bundle, 'checkpoint': str(tmp_path / 'part' / 'model.aeth')})
    run_chain(full, str(tmp_path), ['pretrain', '--no-plots'])
    run_chain(short, str(tmp_path), ['pretrain', '--no-plots'])
    run_chain(rest, str(tmp_path), ['pretrain', '--no-plots', '--resume-from',
                                    str(tmp_path / 'part' / 'model.aeth')])

    a = pd.read_csv(tmp_path / 'full' / 'training_log.csv')
    b = pd.read_csv(tmp_path / 'part' / 'training_log.csv')
    assert len(b) == 4
    np.testing.assert_allclose(a['l_total'], b['l_total'], rtol=0, atol=1e-9)


def test_resume_without_state_fails(pipeline, tmp_path, caplog):
    config, out = pipeline
    assert main(['--config', config, '--out-dir', out, 'pretrain', '--resume-from', str(tmp_path / 'none.aeth')]) == 1
    assert 'no resume state' in caplog.text


def test_rerun_is_bit_identical(pipeline, tmp_path):
    config, out = pipeline
    again = str(tmp_path / 'again')
    run_chain(config, again, ['synth'], ['pretrain', '--no-plots'], ['embed'])
    for rel in (('synth', 'manifest.json'), ('pretrain', 'best.aeth'), ('pretrain', 'training_log.csv'),
                ('embeddings', 'luc_aligned.csv'), ('embeddings', 'sdm_aligned.csv')):
        with open(os.path.join(out, *rel), 'rb') as f, open(os.path.join(again, *rel), 'rb') as g:
            assert f.read() == g.read(), rel
