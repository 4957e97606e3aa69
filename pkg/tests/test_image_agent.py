"""Dual-gate labeling: text-side candidate sets and image-side top-N selection."""

import hashlib

import numpy as np
import pytest

from synthforge.backends.simulator import SimulatorFixtures
from synthforge.core import PipelineConfig, PromptRecord, load_vocabulary
from synthforge.embedding import normalize, scaled_similarity
from synthforge.image_agent import (
    CandidateEntry,
    CandidateLabelSet,
    HighConfidencePair,
    ImageAgent,
    embed_class_names,
    image_label_scores,
    select_top_n,
    text_candidate_labels,
)


def axis(i, dim=4):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def make_prompt(prompt_id, class_id, text, embedding=None):
    status = "accepted" if embedding is not None else "refined"
    return PromptRecord(
        prompt_id, class_id, text, embedding=embedding, quality_score=0.99, status=status
    )


def make_agent(bundle_factory, vocab_file, tmp_path, names, fixtures=None, dim=128, **config_kw):
    vocab = load_vocabulary(vocab_file(list(names)))
    config = PipelineConfig(**config_kw)
    bundle = bundle_factory(seed=config.random_seed, dim=dim, fixtures=fixtures)
    run_dir = tmp_path / "run"
    run_dir.mkdir(parents=True, exist_ok=True)
    return ImageAgent(vocab, config, bundle, run_dir), bundle, run_dir


# -- text gate ------------------------------------------------------------


def test_text_gate_includes_identical_excludes_orthogonal(bundle_factory, vocab_file):
    fixtures = SimulatorFixtures(
        text_embeddings={
            "dog": axis(0),
            "sofa": axis(1),
            "tree": axis(2),
            "a dog photo": axis(0),
        }
    )
    vocab = load_vocabulary(vocab_file(["dog", "sofa", "tree"]))
    provider = bundle_factory(dim=4, fixtures=fixtures).embedding
    result = text_candidate_labels(
        make_prompt("p0", 0, "a dog photo"), vocab, 0.7, provider
    )
    assert [e.class_id for e in result.entries] == [0]
    assert result.entries[0].text_score == pytest.approx(1.0)


def test_text_gate_is_strictly_greater_than(bundle_factory, vocab_file):
    # orthogonal vectors give a scaled similarity of exactly 0.5
    fixtures = SimulatorFixtures(
        text_embeddings={"dog": axis(0), "other": axis(1), "the prompt": axis(1)}
    )
    vocab = load_vocabulary(vocab_file(["dog", "other"]))
    provider = bundle_factory(dim=4, fixtures=fixtures).embedding
    at_gate = text_candidate_labels(make_prompt("p0", 0, "the prompt"), vocab, 0.5, provider)
    assert [e.class_id for e in at_gate.entries] == [1]  # exactly 0.5 vs dog: excluded
    below_gate = text_candidate_labels(make_prompt("p0", 0, "the prompt"), vocab, 0.49, provider)
    assert [e.class_id for e in below_gate.entries] == [0, 1]


def test_text_gate_matches_brute_force_membership(bundle_factory, vocab_file):
    rng = np.random.default_rng(7)
    names = [f"class{i:02d}" for i in range(20)]
    vocab = load_vocabulary(vocab_file(names))
    for trial in range(15):
        table = {name: rng.normal(size=16) for name in names}
        prompt_text = f"synthetic prompt {trial}"
        table[prompt_text] = rng.normal(size=16)
        provider = bundle_factory(dim=16, fixtures=SimulatorFixtures(text_embeddings=table)).embedding
        gamma = float(rng.uniform(0.4, 0.9))
        result = text_candidate_labels(make_prompt("p0", 0, prompt_text), vocab, gamma, provider)
        p = normalize(table[prompt_text])
        expected = [
            cid
            for cid, name in vocab.classes
            if (1.0 + float(p @ normalize(table[name]))) / 2.0 > gamma
        ]
        assert [e.class_id for e in result.entries] == expected


def test_text_gate_tightening_shrinks_candidates(bundle_factory, vocab_file):
    rng = np.random.default_rng(3)
    names = [f"c{i}" for i in range(12)]
    vocab = load_vocabulary(vocab_file(names))
    table = {name: rng.normal(size=8) for name in names}
    table["the prompt"] = rng.normal(size=8)
    provider = bundle_factory(dim=8, fixtures=SimulatorFixtures(text_embeddings=table)).embedding
    prompt = make_prompt("p0", 0, "the prompt")
    previous = None
    for gamma in (0.3, 0.5, 0.7, 0.9):
        current = {e.class_id for e in text_candidate_labels(prompt, vocab, gamma, provider).entries}
        if previous is not None:
            assert current <= previous
        previous = current


# -- image-side selection --------------------------------------------------


def scored_set(entries):
    return CandidateLabelSet("p0", tuple(CandidateEntry(*e) for e in entries))


def test_image_label_scores_fills_every_entry():
    class_vectors = {0: axis(0), 1: axis(1), 2: axis(2)}
    candidates = scored_set([(0, 0.9), (2, 0.8)])
    scored = image_label_scores(candidates, axis(0), class_vectors)
    assert scored.prompt_id == "p0"
    assert [e.text_score for e in scored.entries] == [0.9, 0.8]
    assert scored.entries[0].image_score == pytest.approx(1.0)
    assert scored.entries[1].image_score == pytest.approx(0.5)


def test_select_top_n_orders_by_image_score():
    candidates = scored_set([(0, 0.9, 0.6), (1, 0.8, 0.9), (2, 0.7, 0.75)])
    assert select_top_n(candidates, 2) == [1, 2]
    assert select_top_n(candidates, 1) == [1]
    assert select_top_n(candidates, 5) == [1, 2, 0]


def test_select_top_n_breaks_ties_toward_lower_class_id():
    candidates = scored_set([(7, 0.9, 0.8), (3, 0.9, 0.8), (5, 0.9, 0.8)])
    assert select_top_n(candidates, 2) == [3, 5]


def test_select_top_n_validation():
    with pytest.raises(ValueError):
        select_top_n(scored_set([(0, 0.9, 0.8)]), 0)
    with pytest.raises(ValueError):
        select_top_n(scored_set([(0, 0.9)]), 1)  # image score missing
    assert select_top_n(scored_set([]), 2) == []


# -- synthesis -------------------------------------------------------------


def test_synthesize_writes_decodable_png_under_class_dir(bundle_factory, vocab_file, tmp_path):
    agent, _, run_dir = make_agent(bundle_factory, vocab_file, tmp_path, ["dining table"])
    record, data = agent.synthesize(make_prompt("p0", 0, "a dining table set for two"))
    assert record.file_path == f"images/dining_table/{record.image_id}.png"
    on_disk = (run_dir / record.file_path).read_bytes()
    assert on_disk == data
    assert data[:8] == b"\x89PNG\r\n\x1a\n"


def test_synthesize_is_repeatable_across_fresh_agents(bundle_factory, vocab_file, tmp_path):
    outputs = []
    for attempt in range(2):
        agent, _, run_dir = make_agent(
            bundle_factory, vocab_file, tmp_path / str(attempt), ["cat"], random_seed=5
        )
        record, data = agent.synthesize(make_prompt("p0", 0, "a cat in the sun"))
        outputs.append((record.image_id, record.provider_seed, data))
    assert outputs[0] == outputs[1]


def test_synthesize_batch_logs_failures_and_continues(bundle_factory, vocab_file, tmp_path):
    fixtures = SimulatorFixtures(
        refuse_image_prompts={"refused subject"}, empty_image_prompts={"hollow subject"}
    )
    agent, _, _ = make_agent(bundle_factory, vocab_file, tmp_path, ["cat"], fixtures=fixtures)
    prompts = [
        make_prompt("p0", 0, "a plain cat"),
        make_prompt("p1", 0, "refused subject"),
        make_prompt("p2", 0, "hollow subject"),
    ]
    records, failures = agent.synthesize_batch(prompts)
    assert [r.prompt_id for r in records] == ["p0"]
    assert {f["prompt_id"]: f["error_type"] for f in failures} == {
        "p1": "RefusalError",
        "p2": "ProviderError",
    }
    assert all(f["stage"] == "images" for f in failures)


def test_synthesize_batch_respects_images_per_prompt(bundle_factory, vocab_file, tmp_path):
    agent, _, run_dir = make_agent(
        bundle_factory, vocab_file, tmp_path, ["cat"], images_per_prompt=3
    )
    records, failures = agent.synthesize_batch([make_prompt("p0", 0, "a cat")])
    assert len(records) == 3 and not failures
    blobs = {(run_dir / r.file_path).read_bytes() for r in records}
    assert len(blobs) == 3  # variation parameter actually varies the render


# -- dual gate --------------------------------------------------------------


def dual_gate_fixture_setup(bundle_factory, vocab_file, tmp_path, image_vector, top_n=2):
    """Prompt text near dog+sofa+tree, image vector supplied by the caller."""
    names = ["dog", "sofa", "tree", "boat"]
    prompt_text = "a dog resting on a sofa near a tree"
    prompt_vec = normalize(np.array([1.0, 1.0, 0.9, 0.0]))
    fixtures = SimulatorFixtures(
        text_embeddings={
            "dog": axis(0), "sofa": axis(1), "tree": axis(2), "boat": axis(3),
            prompt_text: prompt_vec,
        }
    )
    agent, bundle, run_dir = make_agent(
        bundle_factory, vocab_file, tmp_path, names, fixtures=fixtures, dim=4, top_n=top_n
    )
    prompt = make_prompt("p0", 0, prompt_text, embedding=prompt_vec)
    image, data = agent.synthesize(prompt)
    fixtures.image_embeddings[hashlib.sha256(data).hexdigest()] = np.asarray(image_vector, float)
    pairs, selected = agent.dual_gate([image], {"p0": prompt})
    return agent, image, pairs, selected


def test_dual_gate_keeps_cooccurring_subject_and_surface(bundle_factory, vocab_file, tmp_path):
    # dog, sofa and tree clear the text gate; the image looks like sofa then dog
    agent, image, pairs, selected = dual_gate_fixture_setup(
        bundle_factory, vocab_file, tmp_path, image_vector=[0.6, 0.7, 0.1, 0.0]
    )
    assert selected[image.image_id] == {0, 1}
    assert [p.class_id for p in pairs] == [1, 0]  # descending image score
    for pair in pairs:
        assert pair.image_id == image.image_id
        assert pair.text_score > agent.config.gamma_text
        assert 0.0 <= pair.image_score <= 1.0
    assert pairs[0].image_score > pairs[1].image_score


def test_dual_gate_image_tie_prefers_lower_class_id(bundle_factory, vocab_file, tmp_path):
    _, image, _, selected = dual_gate_fixture_setup(
        bundle_factory, vocab_file, tmp_path, image_vector=[1.0, 1.0, 0.0, 0.0], top_n=1
    )
    assert selected[image.image_id] == {0}


def test_dual_gate_empty_candidates_keeps_image_without_labels(
    bundle_factory, vocab_file, tmp_path
):
    prompt_text = "an abstract pattern"
    fixtures = SimulatorFixtures(
        text_embeddings={"dog": axis(0), "sofa": axis(1), prompt_text: axis(3)}
    )
    agent, _, run_dir = make_agent(
        bundle_factory, vocab_file, tmp_path, ["dog", "sofa"], fixtures=fixtures, dim=4
    )
    prompt = make_prompt("p0", 0, prompt_text, embedding=axis(3))
    result = agent.build_high_confidence_set([prompt])
    assert result.pairs == []
    assert len(result.images) == 1
    labeled = result.images[0]
    assert labeled.pseudo_labels == frozenset()
    assert (run_dir / labeled.file_path).is_file()


def test_dual_gate_reuses_stored_prompt_embeddings(bundle_factory, vocab_file, tmp_path):
    agent, bundle, _ = make_agent(bundle_factory, vocab_file, tmp_path, ["cat", "dog"])
    embed = agent.providers.embedding
    prompt = make_prompt(
        "p0", 0, "a cat", embedding=normalize(embed.embed_text("a cat"))
    )
    calls_before = bundle.embedding.calls.get("embed_text", 0)
    image, _ = agent.synthesize(prompt)
    agent.dual_gate([image], {"p0": prompt})
    # only the two class names get embedded, never the prompt text again
    assert bundle.embedding.calls["embed_text"] - calls_before == 2


def test_high_confidence_pairs_survive_independent_recheck(
    bundle_factory, vocab_file, tmp_path
):
    names = ["cat", "dog", "bicycle", "chair"]
    agent, bundle, run_dir = make_agent(bundle_factory, vocab_file, tmp_path, names)
    embed = agent.providers.embedding
    prompts = []
    for i, name in enumerate(names):
        text = f"a photo of a {name}; the {name} looks calm"
        prompts.append(make_prompt(f"p{i}", i, text, embedding=normalize(embed.embed_text(text))))
    result = agent.build_high_confidence_set(prompts)
    assert result.pairs, "gate should retain at least some pairs on natural embeddings"
    class_vectors = embed_class_names(agent.vocabulary, embed)
    by_image = {img.image_id: img for img in result.images}
    prompts_by_id = {p.prompt_id: p for p in prompts}
    for pair in result.pairs:
        image = by_image[pair.image_id]
        prompt = prompts_by_id[image.prompt_id]
        text_score = scaled_similarity(prompt.embedding, class_vectors[pair.class_id])
        assert text_score == pytest.approx(pair.text_score)
        assert text_score > agent.config.gamma_text
        data = (run_dir / image.file_path).read_bytes()
        image_vec = normalize(embed.embed_image(data))
        ranking = sorted(
            (
                (-scaled_similarity(image_vec, class_vectors[e.class_id]), e.class_id)
                for e in text_candidate_labels(
                    prompt, agent.vocabulary, agent.config.gamma_text, embed,
                    class_vectors=class_vectors, prompt_vector=prompt.embedding,
                ).entries
            )
        )
        top = [cid for _, cid in ranking[: agent.config.top_n]]
        assert pair.class_id in top


def test_high_confidence_pair_json_round_trip():
    pair = HighConfidencePair("img01", 3, 0.83, 0.71)
    assert HighConfidencePair.from_json(pair.to_json()) == pair
