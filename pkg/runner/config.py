"""
运行配置 RunConfig

配置文件为 YAML，键为带点号的分节名（如 geometry.r1），也接受嵌套映射。
命令行 --set key=value 使用同样的键覆盖文件中的值。
默认值取自斗篷设计数值实验：r1=1, r2=3, 区域 [-6,6]^2, PML 厚度 1, k0=2π, b=(1,0)。
"""
import logging
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Union

import numpy as np
import yaml

from design.optimizer import VARIANTS, NewtonConfig
from errors import ConfigurationError
from helmholtz.problem import OBSERVATION_REGIONS, Source
from mesh.builder import GeometrySpec

logger = logging.getLogger(__name__)

DIRECTIONS4 = [[1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0]]
FREQUENCIES4 = [0.5, 2.0 / 3.0, 5.0 / 6.0, 1.0]
PRESETS = {
    'directions4': (DIRECTIONS4, [1.0]),
    'frequencies4': ([[1.0, 0.0]], FREQUENCIES4),
    'directions4_frequencies4': (DIRECTIONS4, FREQUENCIES4),
}


@dataclass
class GeometryConfig:
    r1: float = 1.0
    r2: float = 3.0
    l_half: float = 6.0
    w_pml: float = 1.0
    h: float = 0.25
    # 给出时读取网格文件，忽略上面的圆盘参数
    mesh_path: Optional[str] = None
    refine: int = 0

    def to_spec(self) -> GeometrySpec:
        return GeometrySpec(self.r1, self.r2, self.l_half, self.w_pml, self.h)


@dataclass
class PhysicsConfig:
    k0: float = 2.0 * np.pi
    c0: float = 1.0
    directions: List[List[float]] = field(default_factory=lambda: [[1.0, 0.0]])
    frequency_factors: List[float] = field(default_factory=lambda: [1.0])
    preset: Optional[str] = None
    sigma0: Optional[float] = None
    observation: str = 'host'

    def sources(self) -> List[Source]:
        """方向与频率因子的全部组合，按频率分组排列"""
        directions, factors = self.directions, self.frequency_factors
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ConfigurationError(f"未知的入射源预设: {self.preset}，可选 {list(PRESETS)}")
            directions, factors = PRESETS[self.preset]
        out = []
        for factor in factors:
            for d in directions:
                d = np.asarray(d, dtype=float)
                if d.shape != (2,):
                    raise ConfigurationError(f"入射方向必须是二维向量: {d.tolist()}")
                norm = float(np.hypot(*d))
                if norm == 0:
                    raise ConfigurationError("入射方向不能为零向量")
                out.append(Source((float(d[0] / norm), float(d[1] / norm)), float(factor)))
        return out


@dataclass
class MeasureConfig:
    gamma: float = 10.0
    delta: float = 50.0
    alpha: float = 2.0
    seed: int = 0


@dataclass
class WeightsConfig:
    beta_v: float = 1.0
    beta_p: float = 1e-2
    eps: float = 1e-4


@dataclass
class SamplingConfig:
    """SAA 样本数 M、特征对个数 N 与过采样数 p"""
    n_samples: int = 100
    n_eig: int = 50
    oversampling: int = 10
    dense: bool = False


@dataclass
class NewtonSection:
    n_qn: int = 10
    n_cg: int = 10
    n_ls: int = 10
    eps_qn: float = 1e-2
    eps_cg0: float = 0.5
    c_ag: float = 1e-4


@dataclass
class StudyConfig:
    design: Optional[str] = None
    designs: List[str] = field(default_factory=list)
    residual_samples: int = 100
    robustness_samples: int = 10
    levels: int = 3


@dataclass
class OutputConfig:
    directory: str = 'output'
    vtk: bool = True
    csv: bool = True
    plots: bool = True


SECTIONS = ('geometry', 'physics', 'measure', 'weights', 'sampling', 'newton', 'study', 'output')
TOP_LEVEL = ('variant',)


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    newton: NewtonSection = field(default_factory=NewtonSection)
    study: StudyConfig = field(default_factory=StudyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    variant: str = 'deterministic'

    @classmethod
    def from_yaml(cls, path: Optional[Union[str, Path]] = None,
                  overrides: Iterable[str] = ()) -> 'RunConfig':
        """
        读取配置文件并应用 key=value 覆盖

        Raises:
            FileNotFoundError: 配置文件不存在
            ConfigurationError: 未知的键或无法转换的值
        """
        config = cls()
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise FileNotFoundError(f"配置文件不存在: {path}")
            data = yaml.safe_load(path.read_text(encoding='utf-8')) or {}
            if not isinstance(data, Mapping):
                raise ConfigurationError(f"配置文件顶层必须是映射: {path}")
            for key, value in flatten(data).items():
                config.set(key, value)
        for item in overrides:
            key, sep, raw = item.partition('=')
            if not sep:
                raise ConfigurationError(f"覆盖项必须形如 key=value: {item}")
            config.set(key.strip(), yaml.safe_load(raw))
        return config

    def set(self, key: str, value: Any) -> None:
        section, dot, name = key.partition('.')
        if not dot:
            if key not in TOP_LEVEL:
                raise ConfigurationError(f"未知的配置键: {key}")
            setattr(self, key, _coerce(str, value, key))
            return
        if section not in SECTIONS:
            raise ConfigurationError(f"未知的配置键: {key}")
        target = getattr(self, section)
        types = {f.name: f.type for f in fields(target)}
        if name not in types:
            raise ConfigurationError(f"未知的配置键: {key}")
        setattr(target, name, _coerce(types[name], value, key))

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {'variant': self.variant}
        for section in SECTIONS:
            target = getattr(self, section)
            for f in fields(target):
                out[f'{section}.{f.name}'] = getattr(target, f.name)
        return out

    def to_yaml(self, path: Union[str, Path]) -> Path:
        """写出完整解析后的配置，便于复现"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True), encoding='utf-8')
        return path

    def newton_config(self) -> NewtonConfig:
        return NewtonConfig(variant=self.variant,
                            n_samples=self.sampling.n_samples,
                            n_eig=self.sampling.n_eig,
                            oversampling=self.sampling.oversampling,
                            beta_v=self.weights.beta_v,
                            beta_p=self.weights.beta_p,
                            eps=self.weights.eps,
                            **{f.name: getattr(self.newton, f.name) for f in fields(self.newton)})

    def sources(self) -> List[Source]:
        return self.physics.sources()

    def validate(self) -> None:
        """在任何求解之前检查所有模块的前置条件"""
        if self.geometry.mesh_path is None:
            self.geometry.to_spec().validate()
        elif not Path(self.geometry.mesh_path).exists():
            raise FileNotFoundError(f"网格文件不存在: {self.geometry.mesh_path}")
        if self.geometry.refine < 0:
            raise ConfigurationError(f"加密次数不能为负: {self.geometry.refine}")
        if self.physics.k0 <= 0 or self.physics.c0 <= 0:
            raise ConfigurationError(f"k0 与 c0 必须为正: k0={self.physics.k0}, c0={self.physics.c0}")
        if self.physics.observation not in OBSERVATION_REGIONS:
            raise ConfigurationError(f"未知的观测区域: {self.physics.observation}")
        if self.physics.sigma0 is not None and self.physics.sigma0 < 0:
            raise ConfigurationError(f"PML 幅值不能为负: sigma0={self.physics.sigma0}")
        sources = self.sources()
        if not sources:
            raise ConfigurationError("至少需要一个入射源")
        if any(s.frequency_factor <= 0 for s in sources):
            raise ConfigurationError("频率因子必须为正")
        if self.measure.alpha != 2:
            raise ConfigurationError(f"只支持 α = 2，收到 α = {self.measure.alpha}")
        if self.measure.gamma <= 0 or self.measure.delta <= 0:
            raise ConfigurationError(f"γ 与 δ 必须为正: γ={self.measure.gamma}, δ={self.measure.delta}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"未知的目标近似: {self.variant}，可选 {VARIANTS}")
        self.newton_config().validate()
        if self.study.residual_samples < 2 or self.study.robustness_samples < 1:
            raise ConfigurationError("研究样本数过少")
        if self.study.levels < 1:
            raise ConfigurationError(f"网格层数必须至少为 1: {self.study.levels}")
        if not self.output.directory:
            raise ConfigurationError("输出目录不能为空")


def flatten(data: Mapping, prefix: str = '') -> Dict[str, Any]:
    """嵌套映射展开为点号键；已带点号的键原样保留"""
    out: Dict[str, Any] = {}
    for key, value in data.items():
        full = f'{prefix}{key}'
        if isinstance(value, Mapping):
            out.update(flatten(value, f'{full}.'))
        else:
            out[full] = value
    return out


def _coerce(kind: Any, value: Any, key: str) -> Any:
    origin = typing.get_origin(kind)
    args = typing.get_args(kind)
    try:
        if origin is Union:
            if value is None or (isinstance(value, str) and value.lower() in ('none', 'null', '')):
                return None
            inner = [a for a in args if a is not type(None)][0]
            return _coerce(inner, value, key)
        if origin in (list, List):
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [_coerce(args[0], v, key) for v in value] if args else list(value)
        if kind is bool:
            if isinstance(value, str):
                if value.lower() in ('true', 'yes', '1'):
                    return True
                if value.lower() in ('false', 'no', '0'):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if kind is str:
            return str(value)
    except (TypeError, ValueError, IndexError):
        raise ConfigurationError(f"配置项 {key} 的值无法转换: {value!r}") from None
    return value
