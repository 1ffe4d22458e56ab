from pathlib import Path
from typing import Union

import numpy as np

from models import MeshSpec, MotionSequence

# 网格拓扑不在本项目范围内，只写一个固定的占位三角面
PLACEHOLDER_FACES = ((1, 2, 3),)


def export_obj_sequence(seq: MotionSequence, mesh: MeshSpec, out_dir: Union[str, Path]) -> int:
    """
    逐帧导出 OBJ 文件（frame_00000.obj ...）。

    顶点 = 模板坐标 + 当前帧位移，固定 6 位小数，输出是确定的。

    Args:
        seq: 运动序列，顶点数须与 mesh 一致
        mesh: 模板网格
        out_dir: 输出目录，不存在时自动创建

    Returns:
        int: 写出的文件数
    """
    seq.check_mesh(mesh)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    template = mesh.template_positions.astype(np.float64)
    faces = [f for f in PLACEHOLDER_FACES if max(f) <= mesh.vertex_count]
    for t in range(seq.n_frames):
        vertices = template + seq.frames[t].astype(np.float64)
        lines = [f"o {mesh.name}_{t:05d}\n"]
        lines.extend(f"v {x:.6f} {y:.6f} {z:.6f}\n" for x, y, z in vertices)
        lines.extend(f"f {a} {b} {c}\n" for a, b, c in faces)
        with open(out_dir / f"frame_{t:05d}.obj", 'w', encoding='utf-8', newline='\n') as f:
            f.writelines(lines)
    return seq.n_frames
