import pytest
import torch

from tokencodec.codec.encoder import LatentSequence
from tokencodec.codec.vq import (
    Codebook,
    VectorQuantizer,
    ema_update,
    kmeans_init,
    quantize,
    revive_dead,
    utilization_rate,
)
from tokencodec.core.config import VQConfig
from tokencodec.core.exceptions import (
    EmptyInputError,
    InsufficientInitDataError,
    ShapeError,
    ValidationError,
)


def _book(vectors, **cfg):
    """Float64 codebook holding exactly ``vectors``."""
    vectors = torch.as_tensor(vectors, dtype=torch.float64)
    book = Codebook(VQConfig(codebook_size=vectors.shape[0], dim=vectors.shape[1], **cfg)).double()
    book.vectors.copy_(vectors)
    book.ema_embed_sum.copy_(vectors)
    book.ema_cluster_size.fill_(1.0)
    return book


def test_quantize_matches_brute_force(generator):
    """Indices agree exactly with an exhaustive nearest-neighbour search."""
    for _ in range(1000):
        t, v, d = (int(x) for x in torch.randint(1, 33, (3,), generator=generator))
        book = _book(torch.randn(v, d, generator=generator, dtype=torch.float64))
        z = torch.randn(t, d, generator=generator, dtype=torch.float64)

        expected = ((z[:, None, :] - book.vectors[None]) ** 2).sum(-1).argmin(dim=1)
        result = quantize(z, book)
        assert torch.equal(result.indices, expected)
        torch.testing.assert_close(result.quantized, book.vectors[expected])


def test_quantize_float32_offset_latents_match_brute_force():
    """Float32 latents sharing a large offset still find the exact nearest code."""
    g = torch.Generator().manual_seed(11)
    d = 512
    vectors = 5.0 + 0.05 * torch.randn(256, d, generator=g)
    book = Codebook(VQConfig(codebook_size=256, dim=d))
    book.vectors.copy_(vectors)
    z = 5.0 + 0.05 * torch.randn(200, d, generator=g)

    expected = ((z.double()[:, None, :] - vectors.double()[None]) ** 2).sum(-1).argmin(dim=1)
    result = quantize(z, book)
    assert torch.equal(result.indices, expected)
    assert result.quantized.dtype == torch.float32


def test_quantize_scale_invariant(generator):
    """Scaling latents and codes by the same positive factor keeps every index."""
    book = _book(torch.randn(32, 8, generator=generator, dtype=torch.float64))
    z = torch.randn(100, 8, generator=generator, dtype=torch.float64)
    before = quantize(z, book).indices
    for scale in (1e-3, 0.5, 7.0, 1e3):
        scaled = _book(book.vectors * scale)
        assert torch.equal(quantize(z * scale, scaled).indices, before)


def test_quantize_tie_breaks_to_lowest_index():
    """Equidistant codes resolve to the smaller index."""
    book = _book([[1.0], [-1.0], [1.0]])
    assert quantize(torch.tensor([[0.0], [1.0]], dtype=torch.float64), book).indices.tolist() == [0, 0]


def test_quantize_exact_code_has_zero_distance():
    book = _book([[0.0, 0.0], [3.0, 4.0]])
    result = quantize(torch.tensor([[3.0, 4.0]], dtype=torch.float64), book)
    assert result.indices.tolist() == [1]
    assert result.distances.tolist() == [0.0]


def test_quantize_batched_shapes():
    book = _book(torch.randn(8, 4))
    z = torch.randn(2, 5, 4, dtype=torch.float64)
    result = quantize(LatentSequence(z, 75.0), book)
    assert result.indices.shape == (2, 5)
    assert result.quantized.shape == (2, 5, 4)


def test_straight_through_gradient():
    """Gradients through the quantized output reach the latents unchanged."""
    book = _book(torch.randn(4, 3))
    z = torch.randn(6, 3, dtype=torch.float64, requires_grad=True)
    result = quantize(z, book, straight_through=True)
    torch.testing.assert_close(result.quantized, book.vectors[result.indices])
    result.quantized.sum().backward()
    torch.testing.assert_close(z.grad, torch.ones_like(z))


def test_quantize_width_mismatch():
    with pytest.raises(ShapeError):
        quantize(torch.randn(3, 5), Codebook(VQConfig(codebook_size=4, dim=4)))


def test_ema_closed_form():
    """Ten scripted batches follow the hand-written recurrence with gamma 0.99."""
    gamma, eps = 0.99, 1e-5
    book = _book([[0.0, 0.0], [10.0, 10.0]], ema_decay=gamma, epsilon=eps)
    n = [1.0, 1.0]
    m = [[0.0, 0.0], [10.0, 10.0]]
    e = [[0.0, 0.0], [10.0, 10.0]]

    g = torch.Generator().manual_seed(7)
    for step in range(10):
        frames = torch.randn(6, 2, generator=g, dtype=torch.float64) + torch.tensor([0.0, 0.0])
        assign = torch.tensor([0, 0, 0, 1, 1, 1]) if step % 3 else torch.tensor([0, 0, 0, 0, 0, 0])
        ema_update(book, frames, assign)

        for k in range(2):
            mask = assign == k
            count = float(mask.sum())
            s = frames[mask].sum(dim=0).tolist() if count else [0.0, 0.0]
            n[k] = gamma * n[k] + (1 - gamma) * count
            m[k] = [gamma * m[k][j] + (1 - gamma) * s[j] for j in range(2)]
        total = sum(n)
        for k in range(2):
            if (assign == k).any():
                smoothed = (n[k] + eps) / (total + 2 * eps) * total
                e[k] = [m[k][j] / smoothed for j in range(2)]

        torch.testing.assert_close(book.ema_cluster_size, torch.tensor(n, dtype=torch.float64), rtol=0, atol=1e-6)
        torch.testing.assert_close(book.vectors, torch.tensor(e, dtype=torch.float64), rtol=0, atol=1e-6)


def test_ema_keeps_unassigned_vectors():
    book = _book([[1.0], [5.0]])
    ema_update(book, torch.tensor([[0.5]], dtype=torch.float64), torch.tensor([0]))
    assert book.vectors[1].item() == 5.0
    assert book.usage_age.tolist() == [0, 1]
    assert book.usage_count.tolist() == [1, 0]


def test_dead_code_revived_within_age_plus_one():
    """A never-assigned code is replaced by a batch frame after revival_age + 1 batches."""
    def run(seed):
        book = _book([[0.0], [1.0], [100.0]], revival_age=2)
        frames = torch.tensor([[0.1], [0.9], [0.2], [1.1]], dtype=torch.float64)
        for batch in range(1, 6):
            result = quantize(frames, book)
            assert 2 not in result.indices.tolist()
            ema_update(book, frames, result.indices)
            revive_dead(book, frames, rng_seed=seed + batch)
            if book.vectors[2].item() != 100.0:
                return batch, book.vectors[2].item()
        return None, None

    revived_at, vector = run(seed=3)
    assert revived_at == 3
    assert vector in (0.1, 0.9, 0.2, 1.1)
    assert run(seed=3) == (revived_at, vector)


def test_revived_code_stats_reset():
    book = _book([[0.0], [50.0]], revival_age=0)
    book.usage_age.copy_(torch.tensor([0, 1]))
    revive_dead(book, torch.tensor([[2.0]], dtype=torch.float64), rng_seed=0)
    assert book.vectors[1].item() == 2.0
    assert book.ema_cluster_size[1].item() == 1.0
    assert book.usage_age[1].item() == 0


def test_revive_empty_batch():
    with pytest.raises(EmptyInputError):
        revive_dead(_book([[0.0]]), torch.zeros(0, 1, dtype=torch.float64), rng_seed=0)


def test_kmeans_init_recovers_clusters():
    """Well separated blobs give one centroid per blob."""
    g = torch.Generator().manual_seed(0)
    centers = torch.tensor([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    frames = torch.cat([c + 0.1 * torch.randn(50, 2, generator=g) for c in centers])
    book = kmeans_init(frames, VQConfig(codebook_size=4, dim=2, kmeans_iters=10), seed=1)

    assert bool(book.initialized)
    found = sorted(tuple(round(v) for v in row) for row in book.vectors.tolist())
    assert found == sorted(tuple(int(v) for v in c) for c in centers.tolist())
    assert book.ema_cluster_size.sum().item() == 200
    torch.testing.assert_close(book.ema_embed_sum, book.vectors * book.ema_cluster_size.unsqueeze(1))


def test_kmeans_single_code_is_mean():
    frames = torch.randn(40, 3, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    book = kmeans_init(frames, VQConfig(codebook_size=1, dim=3, kmeans_iters=1))
    torch.testing.assert_close(book.vectors[0], frames.mean(dim=0), rtol=0, atol=1e-12)
    assert book.ema_cluster_size.tolist() == [40.0]


def test_kmeans_two_clouds_give_their_means():
    g = torch.Generator().manual_seed(3)
    left = torch.randn(30, 2, generator=g, dtype=torch.float64) * 0.1 + torch.tensor([-50.0, 0.0], dtype=torch.float64)
    right = torch.randn(30, 2, generator=g, dtype=torch.float64) * 0.1 + torch.tensor([50.0, 0.0], dtype=torch.float64)
    book = kmeans_init(torch.cat([left, right]), VQConfig(codebook_size=2, dim=2, kmeans_iters=5), seed=0)

    found = sorted(book.vectors.tolist())
    expected = sorted([left.mean(dim=0).tolist(), right.mean(dim=0).tolist()])
    torch.testing.assert_close(torch.tensor(found), torch.tensor(expected), rtol=0, atol=1e-6)


def test_ema_single_code_closed_form():
    """A constant batch pulls a lone code geometrically toward the frame."""
    gamma, frames = 0.9, torch.full((4, 2), 3.0, dtype=torch.float64)
    book = _book([[0.0, 0.0]], ema_decay=gamma)
    for t in range(1, 21):
        ema_update(book, frames, torch.zeros(4, dtype=torch.long))
        n = gamma ** t * 1.0 + (1 - gamma ** t) * 4
        m = (1 - gamma ** t) * 4 * 3.0
        assert book.ema_cluster_size.item() == pytest.approx(n, abs=1e-12)
        torch.testing.assert_close(book.vectors[0], torch.full((2,), m / n, dtype=torch.float64), rtol=0, atol=1e-9)


def test_kmeans_init_is_seeded():
    frames = torch.randn(64, 3, generator=torch.Generator().manual_seed(5))
    cfg = VQConfig(codebook_size=8, dim=3, kmeans_iters=3)
    torch.testing.assert_close(kmeans_init(frames, cfg, seed=4).vectors, kmeans_init(frames, cfg, seed=4).vectors)


def test_kmeans_init_duplicate_frames(caplog):
    """Fewer distinct frames than codes still yields a full codebook, with a warning."""
    frames = torch.ones(16, 2)
    book = kmeans_init(frames, VQConfig(codebook_size=4, dim=2, kmeans_iters=2))
    assert book.vectors.shape == (4, 2)
    assert "duplicating centroids" in caplog.text


def test_kmeans_init_needs_enough_frames():
    with pytest.raises(InsufficientInitDataError) as exc_info:
        kmeans_init(torch.randn(3, 2), VQConfig(codebook_size=4, dim=2))
    assert exc_info.value.details["frames"] == 3


def test_utilization_rate():
    assert utilization_rate([1] * 4096) == 1.0
    assert utilization_rate([5, 0, 0, 0]) == 0.25
    with pytest.raises(ValidationError):
        utilization_rate([])
    with pytest.raises(ValidationError):
        utilization_rate([1, -1])


def test_vector_quantizer_module():
    """Training mode uses the straight-through path and updates usage."""
    cfg = VQConfig(codebook_size=4, dim=2, kmeans_iters=2)
    vq = VectorQuantizer(cfg)
    assert not vq.initialized
    vq.initialize(torch.randn(20, 2), seed=0)
    assert vq.initialized

    z = torch.randn(1, 10, 2, requires_grad=True)
    result = vq.train()(z)
    assert result.quantized.requires_grad
    vq.update(result, seed=0)
    assert int(vq.codebook.usage_count.sum()) == 10
    assert 0 < vq.utilization() <= 1

    lookup = vq.codes_to_latents(result.indices)
    torch.testing.assert_close(lookup, vq.codebook.vectors[result.indices])
    with pytest.raises(ShapeError):
        vq.codes_to_latents(torch.tensor([4]))
