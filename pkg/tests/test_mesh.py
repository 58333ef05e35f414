import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import tempfile

import numpy as np
import pytest

from errors import ConfigurationError, MeshFormatError, MeshInvariantError
from mesh.builder import (GeometrySpec, Mesh, Region, build_disk_in_square, build_mesh_hierarchy,
                          hole_area, refine_uniform, validate_mesh)
from mesh.reader import MeshReader, load_mesh, write_mesh

SMALL = GeometrySpec(r1=0.5, r2=1.0, l_half=2.0, w_pml=0.5, h=0.25)


def square_mesh_text(tag: str = 'HOST') -> str:
    """[-1,1]^2 上 3x3 顶点、8 个三角形的网格文件"""
    lines = ['cloakmesh v1', '9 8 0']
    for j in range(3):
        for i in range(3):
            lines.append(f'{i - 1} {j - 1}')
    for j in range(2):
        for i in range(2):
            a, b, c, d = j * 3 + i, j * 3 + i + 1, (j + 1) * 3 + i + 1, (j + 1) * 3 + i
            lines.append(f'{a} {b} {c} {tag}')
            lines.append(f'{a} {c} {d} {tag}')
    return '\n'.join(lines) + '\n'


def write_text(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    with open(path, 'w', encoding='ascii') as f:
        f.write(text)
    return path


def test_geometry_spec_validation():
    """测试几何参数校验"""
    SMALL.validate()
    with pytest.raises(ConfigurationError):
        GeometrySpec(r1=1.0, r2=1.0 + 1e-9).validate()
    with pytest.raises(ConfigurationError):
        GeometrySpec(r1=1.0, r2=5.5, l_half=6.0, w_pml=1.0).validate()
    with pytest.raises(ConfigurationError):
        GeometrySpec(h=0.0).validate()
    with pytest.raises(ConfigurationError):
        build_disk_in_square(GeometrySpec(r1=2.0, r2=1.0))
    print("✓ 几何参数校验测试通过")


def test_build_disk_in_square_invariants():
    """测试生成网格满足面积、标签与法向不变量"""
    mesh = build_disk_in_square(SMALL)

    assert np.all(mesh.signed_areas > 0)
    assert set(np.unique(mesh.tags)) == {int(Region.HOST), int(Region.CLOAK), int(Region.PML)}

    expected = (2 * SMALL.l_half) ** 2 - hole_area(mesh)
    assert mesh.areas.sum() == pytest.approx(expected, rel=1e-10)

    # 孔边界顶点都在 r1 圆上，法向为单位向量且指向障碍物内部
    facet_points = mesh.vertices[mesh.facets]
    assert np.allclose(np.linalg.norm(facet_points, axis=2), SMALL.r1)
    assert np.allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-12)
    midpoints = facet_points.mean(axis=1)
    assert np.all(np.einsum('fd,fd->f', mesh.normals, midpoints) < 0)
    assert abs(hole_area(mesh) - np.pi * SMALL.r1 ** 2) < 0.1

    cloak_v = np.unique(mesh.triangles[mesh.cells(Region.CLOAK)])
    pml_v = np.unique(mesh.triangles[mesh.cells(Region.PML)])
    assert len(np.intersect1d(cloak_v, pml_v)) == 0
    print(f"✓ 网格不变量测试通过 ({mesh.n_vertices} 个顶点)")


def test_region_tags_by_centroid():
    """测试按质心划分区域"""
    mesh = build_disk_in_square(SMALL)
    centroids = mesh.centroids
    cloak = mesh.cells(Region.CLOAK)
    pml = mesh.cells(Region.PML)
    host = mesh.cells(Region.HOST)

    assert np.all(np.linalg.norm(centroids[cloak], axis=1) <= SMALL.r2)
    assert np.all(np.abs(centroids[pml]).max(axis=1) >= SMALL.l_half - SMALL.w_pml)
    assert np.all(np.linalg.norm(centroids[host], axis=1) > SMALL.r2)
    assert len(cloak) + len(pml) + len(host) == mesh.n_triangles
    print("✓ 区域标签测试通过")


def test_dof_counts():
    """测试自由度统计"""
    mesh = build_disk_in_square(SMALL)
    summary = mesh.summary()
    assert summary['state_dofs'] == 2 * mesh.n_vertices
    assert summary['design_dofs'] == len(mesh.cells(Region.CLOAK))
    assert summary['random_dofs'] == len(np.unique(mesh.triangles[mesh.cloak_cells]))

    dof_map = mesh.cloak_dof_map()
    assert np.array_equal(np.flatnonzero(dof_map >= 0), mesh.cloak_vertices)
    assert dof_map.max() == summary['random_dofs'] - 1
    print("✓ 自由度统计测试通过")


def test_write_load_roundtrip():
    """测试网格写出后再读入完全一致"""
    mesh = build_disk_in_square(SMALL)
    with tempfile.TemporaryDirectory() as tmp:
        path = write_mesh(mesh, os.path.join(tmp, 'small.txt'))
        loaded = load_mesh(path)
    assert np.array_equal(loaded.vertices, mesh.vertices)
    assert np.array_equal(loaded.triangles, mesh.triangles)
    assert np.array_equal(loaded.tags, mesh.tags)
    assert np.array_equal(loaded.facets, mesh.facets)
    assert np.array_equal(loaded.normals, mesh.normals)
    print("✓ 网格读写往返测试通过")


def test_load_minimal_square_mesh():
    """测试无孔、全部为 HOST 的最小网格"""
    with tempfile.TemporaryDirectory() as tmp:
        reader = MeshReader(write_text(tmp, 'square.txt', square_mesh_text()))
        mesh = reader.parse()
        summary = reader.get_summary()
    assert mesh.n_triangles == 8
    assert len(mesh.facets) == 0
    assert mesh.areas.sum() == pytest.approx(4.0)
    assert summary['host_triangles'] == 8
    assert summary['cloak_triangles'] == 0
    print("✓ 最小网格读取测试通过")


def test_zero_area_triangle_rejected():
    """测试零面积三角形报告出错编号"""
    text = square_mesh_text().replace('0 1 4 HOST', '0 1 2 HOST')
    with tempfile.TemporaryDirectory() as tmp:
        path = write_text(tmp, 'degenerate.txt', text)
        with pytest.raises(MeshInvariantError) as info:
            load_mesh(path)
    assert info.value.triangle == 0
    print("✓ 零面积三角形测试通过")


def test_cloak_touching_pml_rejected():
    """测试 CLOAK 与 PML 相接时拒绝网格"""
    mesh = load_text_mesh(square_mesh_text())
    tags = mesh.tags.copy()
    tags[0] = int(Region.CLOAK)
    tags[1] = int(Region.PML)
    with pytest.raises(MeshInvariantError):
        validate_mesh(Mesh(mesh.vertices, mesh.triangles, tags))
    print("✓ CLOAK/PML 接触测试通过")


def load_text_mesh(text: str) -> Mesh:
    with tempfile.TemporaryDirectory() as tmp:
        return load_mesh(write_text(tmp, 'mesh.txt', text))


def test_mesh_format_errors():
    """测试文件格式错误与缺失文件"""
    with pytest.raises(FileNotFoundError):
        load_mesh('no_such_mesh.txt')
    with pytest.raises(MeshFormatError):
        load_text_mesh(square_mesh_text().replace('cloakmesh v1', 'mesh v0'))
    with pytest.raises(MeshFormatError) as info:
        load_text_mesh(square_mesh_text().replace('0 1 4 HOST', '0 1 4 WATER'))
    assert info.value.line is not None
    with pytest.raises(MeshFormatError):
        load_text_mesh(square_mesh_text().replace('9 8 0', '9 9 0'))
    with pytest.raises(ValueError):
        MeshReader('square.txt').get_summary()
    print("✓ 网格格式错误测试通过")


def test_refine_uniform():
    """测试一分为四加密"""
    mesh = build_disk_in_square(SMALL)
    fine = refine_uniform(mesh)
    n_edges = len(np.unique(np.sort(mesh.triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1), axis=0))

    assert fine.n_triangles == 4 * mesh.n_triangles
    assert fine.n_vertices == mesh.n_vertices + n_edges
    assert len(fine.facets) == 2 * len(mesh.facets)
    assert fine.areas.sum() == pytest.approx(mesh.areas.sum(), rel=1e-12)
    assert np.array_equal(fine.tags, np.repeat(mesh.tags, 4))
    assert len(fine.cloak_cells) == 4 * len(mesh.cloak_cells)
    print("✓ 网格加密测试通过")


def test_mesh_hierarchy():
    """测试网格层级"""
    meshes = build_mesh_hierarchy(SMALL, 2)
    assert len(meshes) == 2
    assert meshes[1].n_triangles == 4 * meshes[0].n_triangles
    with pytest.raises(ConfigurationError):
        build_mesh_hierarchy(SMALL, 0)
    print("✓ 网格层级测试通过")


def run_all_tests():
    """运行所有测试"""
    print("=" * 50)
    print("开始运行网格模块测试")
    print("=" * 50)

    test_geometry_spec_validation()
    test_build_disk_in_square_invariants()
    test_region_tags_by_centroid()
    test_dof_counts()
    test_write_load_roundtrip()
    test_load_minimal_square_mesh()
    test_zero_area_triangle_rejected()
    test_cloak_touching_pml_rejected()
    test_mesh_format_errors()
    test_refine_uniform()
    test_mesh_hierarchy()

    print("\n" + "=" * 50)
    print("所有网格测试完成！")
    print("=" * 50)


if __name__ == "__main__":
    run_all_tests()
