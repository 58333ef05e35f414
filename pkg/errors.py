"""斗篷设计项目的异常层次"""

from typing import Any, Dict, Optional


class CloakDesignError(Exception):
    """所有项目异常的基类"""


class ConfigurationError(CloakDesignError, ValueError):
    """配置或输入参数不合法（命令行退出码 2）"""


class MeshFormatError(ConfigurationError):
    """网格文件解析失败"""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"第{line}行: {message}"
        super().__init__(message)
        self.line = line


class MeshInvariantError(ConfigurationError):
    """网格不满足不变量，triangle 为出错三角形编号"""

    def __init__(self, message: str, triangle: Optional[int] = None):
        if triangle is not None:
            message = f"三角形 {triangle}: {message}"
        super().__init__(message)
        self.triangle = triangle


class EmptyOperatorError(ConfigurationError):
    """区域筛选没有选中任何三角形"""


class DomainError(CloakDesignError, ValueError):
    """求值点不在指定三角形内"""


class DimensionError(CloakDesignError, ValueError):
    """向量长度与自由度数不一致"""


class SolverError(CloakDesignError, RuntimeError):
    """稀疏直接分解失败（命令行退出码 3）"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.trace = None
