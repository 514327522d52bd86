import pytest

from text_sidecar.server import build_handler


@pytest.fixture(scope="session")
def handler():
    return build_handler("builtin", "builtin", 64)


def en_sentences():
    givens = ["Alice", "Bob", "Carol", "David", "Emma", "Frank", "Grace", "Henry"]
    locations = ["Hangzhou", "Boston", "Paris", "West Lake", "Tokyo"]
    out = []
    for i in range(25):
        g1 = givens[i % len(givens)]
        g2 = givens[(i + 3) % len(givens)]
        loc = locations[i % len(locations)]
        out.append(f"{g1} Miller met {g2} near {loc} to review case {i}.")
    return out


def zh_sentences():
    surnames = "张王李赵刘陈杨黄"
    givens = ["伟", "芳", "娜娜", "敏", "静", "丽", "强", "磊"]
    cities = ["杭州", "北京", "上海", "深圳", "成都"]
    out = []
    for i in range(25):
        s = surnames[i % len(surnames)]
        g = givens[i % len(givens)]
        city = cities[i % len(cities)]
        out.append(f"{s}{g}在{city}提交了第{i}号案件。")
    return out


@pytest.fixture(scope="session")
def bilingual_fixture():
    return en_sentences() + zh_sentences()
