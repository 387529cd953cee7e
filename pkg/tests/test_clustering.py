import numpy as np
import pytest

from lsmcpde import ParameterError
from lsmcpde.clustering import PathStatisticClusterer, cluster_paths, clustered_weights


def test_singletons(rng):
    theta = rng.normal(size=(30, 4))
    a = cluster_paths(theta, 30)
    assert a.n_clusters == 30
    np.testing.assert_array_equal(a.representatives, theta)
    np.testing.assert_array_equal(clustered_weights(a), 1.0)


def test_single_cluster(rng):
    theta = rng.normal(size=(25, 4))
    a = cluster_paths(theta, 1)
    np.testing.assert_allclose(a.representatives[0], theta.mean(axis=0))
    np.testing.assert_array_equal(clustered_weights(a), [25.0])


def test_two_blobs(rng):
    a_pts = rng.normal(0.0, 1.0, size=(40, 4))
    b_pts = rng.normal(10.0, 1.0, size=(60, 4))
    theta = np.vstack([a_pts, b_pts])
    perm = rng.permutation(100)
    a = cluster_paths(theta[perm], 2)
    blob = perm >= 40
    # one label per blob, no mixing
    assert len(set(a.labels[blob])) == 1 and len(set(a.labels[~blob])) == 1
    assert a.labels[blob][0] != a.labels[~blob][0]
    assert sorted(a.sizes) == [40, 60]


def test_weights_match_sizes(rng):
    theta = np.vstack([np.zeros((3, 2)), np.full((2, 2), 5.0), np.full((5, 2), -5.0)])
    theta += rng.normal(scale=1e-3, size=theta.shape)
    a = cluster_paths(theta, 3)
    np.testing.assert_array_equal(clustered_weights(a), [3.0, 2.0, 5.0])
    assert clustered_weights(a).sum() == 10


def test_labels_ordered_by_first_member(rng):
    a = cluster_paths(rng.normal(size=(200, 4)), 17)
    firsts = [a.members(k)[0] for k in range(a.n_clusters)]
    assert firsts == sorted(firsts)
    assert a.labels[0] == 0


def test_partition_and_means(rng):
    theta = rng.normal(size=(150, 4))
    a = cluster_paths(theta, 20)
    assert a.sizes.sum() == 150
    for k in range(a.n_clusters):
        np.testing.assert_allclose(a.representatives[k], theta[a.members(k)].mean(axis=0))


def test_deterministic(rng):
    theta = rng.normal(size=(300, 4))
    a = cluster_paths(theta, 40)
    b = cluster_paths(theta.copy(), 40)
    np.testing.assert_array_equal(a.labels, b.labels)


@pytest.mark.parametrize("target", [0, 11])
def test_bad_target(rng, target):
    with pytest.raises(ParameterError):
        cluster_paths(rng.normal(size=(10, 4)), target)


def test_estimator_api(rng):
    theta = rng.normal(size=(80, 4))
    est = PathStatisticClusterer(n_clusters=8).fit(theta)
    centers, weights = est.transform()
    assert centers.shape == (8, 4) and weights.sum() == 80
    np.testing.assert_array_equal(est.fit_predict(theta), est.labels_)
