from __future__ import annotations

import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from supplygraph.backends import ScriptedBackend, load_script
from supplygraph.corpus import StopwordLists, load_corpus
from supplygraph.crawler import CrawlConfig

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

NEWS_PATH = os.path.join(FIXTURES, "news.jsonl")
TRUTH_PATH = os.path.join(FIXTURES, "news_mentions.json")
GAZETTEER_PATH = os.path.join(FIXTURES, "gazetteer.jsonl")
DEDUP_NEWS_PATH = os.path.join(FIXTURES, "dedup_news.jsonl")
LABELS_PATH = os.path.join(FIXTURES, "labels.jsonl")


@pytest.fixture(scope="session")
def stopwords() -> StopwordLists:
    return StopwordLists.default()


@pytest.fixture()
def news_corpus():
    return load_corpus(NEWS_PATH)


@pytest.fixture()
def gazetteer_backend():
    return ScriptedBackend(load_script(GAZETTEER_PATH))


@pytest.fixture()
def gazetteer():
    with open(GAZETTEER_PATH, encoding="utf-8") as fh:
        return json.loads(fh.readline())["gazetteer"]


@pytest.fixture()
def news_truth():
    with open(TRUTH_PATH, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture()
def fixture_config():
    return CrawlConfig(seeds=["bechtel"], year_range=(2019, 2021), per_year_min=1)
