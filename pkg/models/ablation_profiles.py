"""
Ablation profiles
Which pipeline components are switched on for each comparison row
"""

from dataclasses import dataclass, replace
from enum import Enum

from .errors import ConfigError
from .superpixel import ProxyMode


@dataclass(frozen=True)
class AblationConfig:
    use_si_proxy: bool = True
    use_memory: bool = True
    use_repairing: bool = True
    score_in_latent: bool = True
    proxy_mode: ProxyMode = ProxyMode.SI

    def __post_init__(self):
        object.__setattr__(self, "proxy_mode", ProxyMode.parse(self.proxy_mode))
        if self.use_repairing and not self.use_si_proxy:
            raise ConfigError("use_repairing requires use_si_proxy (repairing works on proxies)")

    @property
    def two_stage(self):
        return self.use_si_proxy

    def tag(self):
        """Row name in the comparison tables, e.g. 2xEncDec+SI+mem+rep+lat"""
        if not self.use_si_proxy:
            parts = ["EncDec"]
        else:
            proxy = "SI" if self.proxy_mode == ProxyMode.SI else self.proxy_mode.value
            parts = ["2xEncDec", proxy]
        if self.use_memory:
            parts.append("mem")
        if self.use_repairing:
            parts.append("rep")
        if self.score_in_latent:
            parts.append("lat")
        return "+".join(parts)

    def stage1_key(self):
        """Everything the proxy extraction stage depends on"""
        return (self.use_si_proxy, self.use_memory, self.proxy_mode.value)

    def with_mode(self, mode):
        return replace(self, proxy_mode=ProxyMode.parse(mode))


class AblationRow(Enum):
    """Rows of the component ablation (the soft-addressing row 2 is not built)"""
    AUTOENCODER = 1        # EncDec
    AE_MEMORY = 3          # EncDec + mem
    SI_BRIDGE = 4          # 2xEncDec + SI
    SI_MEMORY = 5          # 2xEncDec + SI + mem
    SI_REPAIR = 6          # 2xEncDec + SI + rep
    SI_MEMORY_REPAIR = 7   # 2xEncDec + SI + mem + rep
    FINAL = 8              # 2xEncDec + SI + mem + rep + lat


def get_ablation_config(row, proxy_mode=ProxyMode.SI) -> AblationConfig:
    """Component switches for one ablation row"""
    row = AblationRow(int(row.value if isinstance(row, AblationRow) else row))

    if row == AblationRow.AUTOENCODER:
        flags = dict(use_si_proxy=False, use_memory=False, use_repairing=False, score_in_latent=False)
    elif row == AblationRow.AE_MEMORY:
        flags = dict(use_si_proxy=False, use_memory=True, use_repairing=False, score_in_latent=False)
    elif row == AblationRow.SI_BRIDGE:
        flags = dict(use_si_proxy=True, use_memory=False, use_repairing=False, score_in_latent=False)
    elif row == AblationRow.SI_MEMORY:
        flags = dict(use_si_proxy=True, use_memory=True, use_repairing=False, score_in_latent=False)
    elif row == AblationRow.SI_REPAIR:
        flags = dict(use_si_proxy=True, use_memory=False, use_repairing=True, score_in_latent=False)
    elif row == AblationRow.SI_MEMORY_REPAIR:
        flags = dict(use_si_proxy=True, use_memory=True, use_repairing=True, score_in_latent=False)
    else:  # FINAL
        flags = dict(use_si_proxy=True, use_memory=True, use_repairing=True, score_in_latent=True)

    return AblationConfig(proxy_mode=proxy_mode, **flags)


ABLATION_LADDER = [row.value for row in AblationRow]


def row_from_flags(config: AblationConfig):
    """The ablation row a flag combination corresponds to, or None"""
    for row in AblationRow:
        if get_ablation_config(row, config.proxy_mode) == config:
            return row.value
    return None
