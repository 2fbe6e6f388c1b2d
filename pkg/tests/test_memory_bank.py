import numpy as np
import pytest
import torch

from models.errors import ArgumentError
from models.memory_bank import EPS, MemoryBank, flatten_latent, init_bank, straight_through


def _bank(items, gamma=0.99):
    items = torch.as_tensor(items, dtype=torch.float64)
    bank = MemoryBank(items.shape[0], items.shape[1], gamma)
    bank.items.copy_(items)
    bank.accum.copy_(items)
    return bank


class TestRetrieve:
    def test_exact_match(self):
        bank = _bank([[0, 0], [1, 0], [0, 1], [5, 5]])
        z_tilde, assignments = bank.retrieve(torch.tensor([[5.0, 5.0]], dtype=torch.float64))
        assert assignments.tolist() == [3]
        assert z_tilde.tolist() == [[5.0, 5.0]]

    def test_distance_table(self):
        bank = _bank([[0, 0], [1, 0], [0, 1]])
        _, assignments = bank.retrieve(torch.tensor([[0.6, 0.1]]))
        assert assignments.tolist() == [1]

    def test_tie_goes_to_lower_index(self):
        bank = _bank([[1, 0], [-1, 0]])
        _, assignments = bank.retrieve(torch.tensor([[0.0, 0.0]]))
        assert assignments.tolist() == [0]

    def test_dimension_mismatch(self):
        bank = _bank([[0, 0, 0]])
        with pytest.raises(ArgumentError):
            bank.retrieve(torch.zeros(2, 2))

    def test_matches_exhaustive_search(self, rng):
        for _ in range(1000):
            k, d, s = int(rng.integers(1, 17)), int(rng.integers(1, 9)), int(rng.integers(1, 10))
            items = rng.normal(size=(k, d))
            queries = rng.normal(size=(s, d))
            if rng.random() < 0.2:
                queries[0] = items[int(rng.integers(k))]
            _, assignments = _bank(items).retrieve(torch.from_numpy(queries))
            for row, assigned in zip(queries, assignments.tolist()):
                distances = [float(np.sum((row - item) ** 2)) for item in items]
                best = min(distances)
                assert assigned == distances.index(best)

    def test_blocked_search_matches_single_block(self, rng, monkeypatch):
        bank = _bank(rng.normal(size=(16, 8)))
        rows = torch.from_numpy(rng.normal(size=(1000, 8)))
        rows[7] = bank.items[3]
        whole = bank.nearest(rows)
        monkeypatch.setattr("models.memory_bank.NEAREST_BLOCK", 16 * 8 * 3)
        blocked = bank.nearest(rows)
        assert torch.equal(blocked, whole)
        assert blocked[7].item() == 3

    def test_feature_map_round_trip_shape(self):
        bank = init_bank(4, 3, seed=0)
        z = torch.randn(2, 3, 5, 5)
        z_tilde, assignments = bank.retrieve(z)
        assert z_tilde.shape == z.shape
        assert assignments.shape == (50,)
        assert flatten_latent(z).shape == (50, 3)


class TestEmaUpdate:
    def test_hand_formula(self):
        bank = _bank([[1.0, 0.0]])
        bank.ema_update(torch.tensor([[0.0, 1.0]]), torch.tensor([0]))
        assert bank.counts[0].item() == pytest.approx(1.0)
        np.testing.assert_allclose(bank.accum[0].numpy(), [0.99, 0.01], atol=1e-12)
        np.testing.assert_allclose(bank.items[0].numpy(), [0.99, 0.01], atol=1e-12)

    def test_unassigned_item_keeps_its_value(self):
        bank = _bank([[1.0, 0.0], [0.0, 5.0]])
        bank.ema_update(torch.tensor([[0.0, 4.0]]), torch.tensor([1]))
        np.testing.assert_allclose(bank.items[0].numpy(), [1.0, 0.0], atol=1e-12)

    def test_converges_to_repeated_row(self):
        bank = _bank([[1.0, 0.0]], gamma=0.9)
        v = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
        gaps = []
        for _ in range(200):
            bank.ema_update(v, torch.tensor([0]))
            gaps.append(torch.linalg.vector_norm(bank.items[0] - v[0]).item())
        assert gaps[-1] < 1e-6
        assert gaps[-1] / gaps[-2] == pytest.approx(0.9, rel=1e-3)

    def test_random_steps_match_hand_formula(self, rng):
        for _ in range(1000):
            k, d, s = int(rng.integers(1, 17)), int(rng.integers(1, 9)), int(rng.integers(1, 12))
            gamma = float(rng.uniform(0.5, 0.999))
            bank = _bank(rng.normal(size=(k, d)), gamma)
            bank.counts.copy_(torch.from_numpy(rng.uniform(0.1, 3.0, size=k)))
            counts, accum = bank.counts.numpy().copy(), bank.accum.numpy().copy()
            rows = rng.normal(size=(s, d))
            _, assignments = bank.retrieve(torch.from_numpy(rows))

            bank.ema_update(torch.from_numpy(rows), assignments)

            for i in range(k):
                chosen = rows[assignments.numpy() == i]
                n_i = chosen.shape[0]
                s_i = chosen.sum(axis=0) if n_i else np.zeros(d)
                n_new = counts[i] * gamma + n_i * (1 - gamma)
                e_new = accum[i] * gamma + s_i * (1 - gamma)
                np.testing.assert_allclose(bank.items[i].numpy(), e_new / max(n_new, EPS), atol=1e-9)
            np.testing.assert_allclose(bank.items.numpy(),
                                       bank.accum.numpy() / np.maximum(bank.counts.numpy(), EPS)[:, None],
                                       atol=1e-9)

    def test_stale_assignments(self):
        bank = _bank([[0.0, 0.0]])
        with pytest.raises(ArgumentError):
            bank.ema_update(torch.zeros(3, 2), torch.tensor([0, 0]))


class TestInitBank:
    def test_default_shape(self):
        bank = init_bank(128, 64)
        assert bank.items.shape == (128, 64)
        assert bank.items.abs().max().item() <= 1.0 / 8.0

    def test_warmup_permutation(self, rng):
        rows = torch.from_numpy(rng.normal(size=(6, 3)))
        bank = init_bank(6, 3, seed=1, warmup_features=rows)
        as_set = lambda t: sorted(map(tuple, t.tolist()))  # noqa: E731
        assert as_set(bank.items) == as_set(rows)
        torch.testing.assert_close(bank.accum, bank.items)
        assert torch.all(bank.counts == 1.0)

    def test_warmup_with_few_rows(self):
        rows = torch.eye(2, dtype=torch.float64)
        bank = init_bank(5, 2, seed=0, warmup_features=rows)
        for item in bank.items:
            assert any(torch.equal(item, row) for row in rows)

    def test_same_seed_same_bank(self):
        assert torch.equal(init_bank(8, 4, seed=3).items, init_bank(8, 4, seed=3).items)

    def test_serialization(self):
        bank = init_bank(8, 4, seed=3, gamma=0.95)
        bank.ema_update(torch.randn(10, 4), torch.randint(0, 8, (10,)))
        clone = MemoryBank.from_bytes(bank.to_bytes())
        assert (clone.k, clone.d, clone.gamma) == (8, 4, 0.95)
        for name in ("items", "counts", "accum"):
            assert torch.equal(getattr(clone, name), getattr(bank, name))


class TestStraightThrough:
    def test_forward_is_z_tilde(self):
        z = torch.randn(2, 4, 3, 3, requires_grad=True)
        z_tilde = torch.randn(2, 4, 3, 3)
        assert torch.equal(straight_through(z, z_tilde), z_tilde)

    def test_sum_gradient_is_ones(self):
        z = torch.randn(5, 3, requires_grad=True)
        straight_through(z, torch.randn(5, 3)).sum().backward()
        assert torch.equal(z.grad, torch.ones(5, 3))

    def test_half_square_gradient_is_z_tilde(self):
        z = torch.randn(5, 3, dtype=torch.float64, requires_grad=True)
        z_tilde = torch.randn(5, 3, dtype=torch.float64)
        (0.5 * straight_through(z, z_tilde).pow(2).sum()).backward()
        torch.testing.assert_close(z.grad, z_tilde, atol=1e-6, rtol=0)

    def test_matches_finite_differences_of_downstream_loss(self):
        z_tilde = torch.randn(4, 2, dtype=torch.float64)
        z = torch.randn(4, 2, dtype=torch.float64, requires_grad=True)
        loss = lambda x: (torch.sin(x) * x).sum()  # noqa: E731
        loss(straight_through(z, z_tilde)).backward()

        h = 1e-6
        numeric = torch.zeros_like(z_tilde)
        for i in range(z_tilde.numel()):
            step = torch.zeros(z_tilde.numel(), dtype=torch.float64)
            step[i] = h
            step = step.view_as(z_tilde)
            numeric.view(-1)[i] = (loss(z_tilde + step) - loss(z_tilde - step)) / (2 * h)
        torch.testing.assert_close(z.grad, numeric, atol=1e-4, rtol=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ArgumentError):
            straight_through(torch.zeros(2, 3), torch.zeros(3, 2))
