import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from rlminer.kg import KnowledgeGraph  # noqa: E402


@pytest.fixture
def hand_kg():
    """Six facts: people born in cities, cities in countries, one nationality."""
    triples = [
        ("ann", "bornIn", "paris"), ("bob", "bornIn", "lyon"), ("cat", "bornIn", "rome"),
        ("paris", "country", "france"), ("lyon", "country", "france"),
        ("ann", "nationality", "france"),
    ]
    return KnowledgeGraph.from_triples(triples)



def pytest_collection_finish(session):
    import re
    session.config._acceptance_selected = {int(m.group(1)) for item in session.items
                                   if item.module.__name__ == "test_acceptance"
                                   for m in [re.match(r"test_(\d+)_", item.name)] if m}


def pytest_terminal_summary(terminalreporter, config):
    if not getattr(config, "_acceptance_selected", None):
        return
    import acceptance_log
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance_log.TITLES):
        selected = n in config._acceptance_selected
        terminalreporter.write_line(acceptance_log.line(n) if selected else
                                    f"criterion {n:2d} NOT RUN  {acceptance_log.TITLES[n]} (deselected)")
