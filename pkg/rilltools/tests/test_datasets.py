import numpy as np
import pytest

from rilltools import datasets, parser
from rilltools.datasets import (AdditionTaskSpec, FourClusterSpec, HierarchyTaskSpec,
                                equation_digits, gen_addition_groups, gen_four_cluster,
                                gen_hierarchy)
from rilltools.errors import FormatError, InsufficientDataError, SeparabilityError
from rilltools.tests.factory import idx_images, idx_labels

#: operands, the four digits of their equation
VALID_EQUATIONS = (
    ((0, 0), (0, 0, 0, 0)),
    ((5, 2), (5, 2, 0, 7)),
    ((4, 6), (4, 6, 1, 0)),
    ((9, 9), (9, 9, 1, 8)),
)


class TestFourCluster(object):

    def test_same_seed_same_dataset(self):
        first, second = gen_four_cluster(seed=7), gen_four_cluster(seed=7)
        assert np.array_equal(first.train.inputs, second.train.inputs)
        assert np.array_equal(first.test.inputs, second.test.inputs)
        assert not np.array_equal(first.train.inputs, gen_four_cluster(seed=8).train.inputs)

    def test_train_split_exposes_shape_labels_only(self):
        task = gen_four_cluster(FourClusterSpec(per_cluster=200))
        assert len(task.train) == 200
        assert len(task.test) == 600
        assert np.bincount(task.train.labels['shape']).tolist() == [50, 50, 50, 50]
        assert task.train.label_mask['shape'].all()
        assert not task.train.label_mask['colour'].any()
        assert not task.test.label_mask['shape'].any()
        assert task.heads == (('shape', 4), ('colour', 4))
        assert task.predicates['Blue'] == ('colour', 0)
        assert task.predicates['Circle'] == ('shape', 0)

    def test_rule_direction(self):
        assert parser.format_rule(gen_four_cluster().kb.rules[0]) == \
            'forall x: Blue(x) -> Circle(x)'
        assert parser.format_rule(datasets.four_cluster_kb('circle_blue').rules[0]) == \
            'forall x: Circle(x) -> Blue(x)'
        with pytest.raises(ValueError):
            datasets.four_cluster_kb('red_star')

    def test_overlapping_clusters_are_rejected(self):
        with pytest.raises(SeparabilityError):
            gen_four_cluster(FourClusterSpec(spread=3.0))
        with pytest.raises(ValueError):
            gen_four_cluster(FourClusterSpec(centers=((0.0, 0.0),)))


class TestAddition(object):

    def test_equation_digits(self):
        for operands, digits in VALID_EQUATIONS:
            assert equation_digits(*operands) == digits

    def test_groups_satisfy_their_equation(self, addition_task):
        task, _ = addition_task
        digits = task.train.labels['digit'][task.train.groups]
        assert task.train.groups.shape == (200, 4)
        assert np.array_equal(digits[:, 0] + digits[:, 1], 10 * digits[:, 2] + digits[:, 3])
        assert task.slots == ('s1', 's2', 's3', 's4')
        assert task.bindings['x3'] == ('s3',)

    def test_labelled_subset_is_stratified(self, addition_task):
        task, _ = addition_task
        labelled = task.train.labelled_indices('digit')
        assert np.bincount(task.train.labels['digit'][labelled]).tolist() == [10] * 10
        assert len(task.test) == 200

    def test_kb_text_reparses_to_the_task_kb(self, addition_task):
        task, text = addition_task
        assert len(task.kb) == 100
        assert parser.parse_kb(text) == task.kb
        assert '(D1_5(x1) & D2_2(x2)) -> (D3_0(x3) & D4_7(x4))' in text

    def test_small_pools_raise(self):
        with pytest.raises(InsufficientDataError):
            gen_addition_groups(AdditionTaskSpec(pool_per_class=3, labelled_per_class=1,
                                                 train_groups=10, test_samples_per_class=1))
        with pytest.raises(ValueError):
            gen_addition_groups(AdditionTaskSpec(base='cifar'))
        with pytest.raises(ValueError):
            gen_addition_groups(AdditionTaskSpec(base='mnist'))


def test_stratified_labelled_indices():
    labels = np.repeat(np.arange(3), 5)
    chosen = datasets.stratified_labelled_indices(labels, 2, seed=1)
    assert np.bincount(labels[chosen]).tolist() == [2, 2, 2]
    assert chosen.tolist() == sorted(chosen.tolist())
    assert np.array_equal(chosen, datasets.stratified_labelled_indices(labels, 2, seed=1))

    with pytest.raises(InsufficientDataError):
        datasets.stratified_labelled_indices(labels, 6, seed=1)
    with pytest.raises(ValueError):
        datasets.stratified_labelled_indices(labels, 0, seed=1)


def test_gen_blobs():
    inputs, labels = datasets.gen_blobs(n_classes=3, dim=5, per_class=4, seed=1)
    assert inputs.shape == (12, 5)
    assert labels.tolist() == [0] * 4 + [1] * 4 + [2] * 4
    again, _ = datasets.gen_blobs(n_classes=3, dim=5, per_class=4, seed=1)
    assert np.array_equal(inputs, again)
    with pytest.raises(ValueError):
        datasets.gen_blobs(n_classes=1)


def test_hierarchy_task_shapes():
    spec = HierarchyTaskSpec(super_classes=3, sub_classes=2, dim=4, train_per_class=10,
                             test_per_class=5, labelled_per_class=2)
    task = gen_hierarchy(spec, seed=3)
    assert task.heads == (('sub', 6), ('super', 3))
    assert len(task.train) == 60 and len(task.test) == 30
    assert np.array_equal(task.train.labels['super'], task.train.labels['sub'] // 2)
    assert task.train.label_mask['super'].all()
    assert task.train.label_mask['sub'].sum() == 12
    assert task.predicates['C_S1_1'] == ('sub', 3)
    assert task.predicates['SC_S2'] == ('super', 2)
    assert len(task.kb) == 9


class TestIdxIngestion(object):

    IMAGES = np.arange(3 * 2 * 2, dtype=np.uint8).reshape(3, 2, 2) * 20
    LABELS = np.array([7, 0, 3], dtype=np.uint8)

    def test_reads_plain_and_gzipped_files(self, workspace):
        for compress in (False, True):
            images_path, labels_path = workspace.write_idx_pair(
                't10k', self.IMAGES, self.LABELS, compress)
            images, labels = datasets.ingest_mnist_idx(images_path, labels_path)
            assert images.shape == (3, 4)
            assert images.dtype == np.float64
            assert np.allclose(images * 255.0, self.IMAGES.reshape(3, 4))
            assert labels.tolist() == [7, 0, 3]

    def test_load_mnist_finds_files_by_split(self, workspace):
        workspace.write_idx_pair('train', self.IMAGES, self.LABELS, compress=True)
        images, labels = datasets.load_mnist(workspace.path, 'train')
        assert images.shape == (3, 4)
        with pytest.raises(FileNotFoundError):
            datasets.load_mnist(workspace.path, 't10k')

    def test_bad_magic(self, workspace):
        images_path = workspace.write_bytes('images', idx_images(self.IMAGES, magic=0x804))
        labels_path = workspace.write_bytes('labels', idx_labels(self.LABELS))
        with pytest.raises(FormatError) as info:
            datasets.ingest_mnist_idx(images_path, labels_path)
        assert 'magic' in str(info.value)

    def test_truncated_files(self, workspace):
        labels_path = workspace.write_bytes('labels', idx_labels(self.LABELS))
        for data in (idx_images(self.IMAGES)[:-1], idx_images(self.IMAGES)[:10]):
            images_path = workspace.write_bytes('images', data)
            with pytest.raises(FormatError):
                datasets.ingest_mnist_idx(images_path, labels_path)

    def test_count_mismatch(self, workspace):
        images_path = workspace.write_bytes('images', idx_images(self.IMAGES))
        labels_path = workspace.write_bytes('labels', idx_labels(self.LABELS[:2]))
        with pytest.raises(FormatError):
            datasets.ingest_mnist_idx(images_path, labels_path)
