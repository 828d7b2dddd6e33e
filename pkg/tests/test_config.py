import os

import pytest

from utils.config import THREADS_ENV_VAR, Config, load_environment


@pytest.fixture(autouse=True)
def clear_threads_env(monkeypatch):
    monkeypatch.delenv(THREADS_ENV_VAR, raising=False)


def test_cli_value_wins(monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, "8")
    config = Config(threads=3)
    assert config.threads == 3
    assert config.threads_source == "cli"


def test_environment_value(monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, "6")
    config = Config()
    assert config.threads == 6
    assert config.threads_source == "env"


def test_default_is_core_count(monkeypatch):
    monkeypatch.setattr("utils.config.default_thread_count", lambda: 5)
    config = Config()
    assert config.threads == 5
    assert config.threads_source == "default"


@pytest.mark.parametrize("raw", ["zero", "0", "-2"])
def test_invalid_environment_value_falls_back(monkeypatch, caplog, raw):
    monkeypatch.setattr("utils.config.default_thread_count", lambda: 2)
    monkeypatch.setenv(THREADS_ENV_VAR, raw)
    config = Config()
    assert config.threads == 2
    assert config.threads_source == "default"
    assert "defaulting to 2" in caplog.text


def test_invalid_cli_value_falls_back(monkeypatch):
    monkeypatch.setattr("utils.config.default_thread_count", lambda: 4)
    assert Config(threads=0).threads == 4


def test_as_dict():
    config = Config(threads=2, log_directory="run_logs")
    assert config.as_dict() == {"threads": 2, "threads_source": "cli", "log_directory": "run_logs"}


def test_dotenv_does_not_override_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(THREADS_ENV_VAR, "")
    monkeypatch.delenv(THREADS_ENV_VAR)
    env_file = tmp_path / ".env"
    env_file.write_text(f"{THREADS_ENV_VAR}=7\n")
    load_environment(str(env_file))
    assert os.environ[THREADS_ENV_VAR] == "7"

    monkeypatch.setenv(THREADS_ENV_VAR, "3")
    load_environment(str(env_file))
    assert os.environ[THREADS_ENV_VAR] == "3"
