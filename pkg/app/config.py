"""Configuration de QualiPy : réglages du processus et configuration des runs."""
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings

from app.errors import ConfigError


class Settings(BaseSettings):  # pylint: disable=too-few-public-methods
    """Réglages globaux du processus (environnement / .env)."""

    # Logs
    LOG_DIR: str = "logs"
    LOG_LEVEL: str = "INFO"

    # Exécution
    DEVICE: str = "cpu"
    MAX_CPU_WORKERS: int = 2
    DETERMINISTIC: bool = True
    DEFAULT_SEED: int = 0

    # Audio
    SAMPLE_RATE: int = 16_000
    AUDIO_CACHE_SIZE: int = 4096
    # matrices de caractéristiques précalculées gardées en mémoire
    FEATURE_CACHE_SIZE: int = 256

    # Préférences
    DEFAULT_DELTA: float = 0.5
    EVAL_PAIR_CAP: int = 100_000
    DEFAULT_PAIR_METRIC: str = "MOS"
    SWEEP_DELTAS: List[float] = [0.0, 0.25, 0.5, 1.0]

    # Checkpoints
    CHECKPOINT_FORMAT_VERSION: int = 1

    model_config = ConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()


# ==============================================================================
# Configuration d'un run (document JSON + surcharges CLI)
# ==============================================================================

class EncoderConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Une branche de l'extracteur de caractéristiques."""
    kind: Literal["learnable_spectrogram", "precomputed"] = "learnable_spectrogram"
    num_layers: int = Field(default=4, ge=1)
    d: int = Field(default=768, ge=1)
    stride_s: float = Field(default=0.02, gt=0)
    n_mels: int = Field(default=80, ge=1)
    kernel_size: int = Field(default=5, ge=1)
    # backend précalculé
    feature_suffix: str = ".qfeat"
    feature_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_precomputed(self) -> "EncoderConfig":
        if self.kind == "precomputed":
            if self.num_layers != 1:
                raise ValueError("precomputed encoders expose exactly one layer")
            if not self.feature_dir:
                raise ValueError("precomputed encoders need a feature_dir")
        return self


class AmpmConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Encodeurs de groupe + têtes par métrique."""
    layers: int = Field(default=6, ge=1)
    heads: int = Field(default=8, ge=1)
    d_model: int = Field(default=768, ge=1)
    ffn: int = Field(default=2048, ge=1)
    dropout: float = Field(default=0.1, ge=0, lt=1)
    pooling: Literal["mean"] = "mean"
    grouping: Literal["C1", "C5"] = "C5"

    @model_validator(mode="after")
    def _check_heads(self) -> "AmpmConfig":
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        return self


class NcpmConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Module de préférence par attention croisée."""
    layers: int = Field(default=2, ge=1)
    head_hidden: int = Field(default=256, ge=1)
    dropout: float = Field(default=0.1, ge=0, lt=1)


class TrainConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Boucle d'entraînement."""
    lr: float = Field(default=3e-5, gt=0)
    steps: int = Field(default=20_000, ge=1)
    batch_budget_s: float = Field(default=400.0, gt=0)
    seed: int = settings.DEFAULT_SEED
    # M1 / M5 / M15 ou chemin d'un registre JSON
    supervision: str = "M15"
    pair_source: List[str] = Field(default_factory=list)
    native_pair_source: List[str] = Field(default_factory=list)
    mix_ratio: float = Field(default=0.0, ge=0, le=1)
    symmetrize: bool = True
    keep_ties: bool = True
    lambda_mse: float = Field(default=1.0, ge=0)
    lambda_ce: float = Field(default=1.0, ge=0)
    lambda_cmos: float = Field(default=0.0, ge=0)
    # non précisés par la méthode d'origine
    grad_clip: Optional[float] = 1.0
    warmup_steps: int = Field(default=0, ge=0)
    deterministic: bool = settings.DETERMINISTIC
    log_every: int = Field(default=50, ge=1)
    checkpoint_every: int = Field(default=1000, ge=1)


class SynthConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Corpus synthétique à qualité latente connue."""
    n_samples: int = Field(default=200, ge=1)
    min_duration_s: float = Field(default=1.0, gt=0)
    max_duration_s: float = Field(default=3.0, gt=0)
    snr_min_db: float = -5.0
    snr_max_db: float = 30.0
    missingness: Dict[str, float] = Field(default_factory=dict)
    label_noise_sd: float = Field(default=0.0, ge=0)
    n_corpora: int = Field(default=2, ge=1)
    n_systems: int = Field(default=4, ge=1)
    n_references: int = Field(default=2, ge=1)
    seed: int = 0
    sample_rate: int = settings.SAMPLE_RATE
    holdout_fraction: float = Field(default=0.0, ge=0, lt=1)
    n_native_pairs: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "SynthConfig":
        if self.max_duration_s < self.min_duration_s:
            raise ValueError("max_duration_s < min_duration_s")
        if self.snr_max_db <= self.snr_min_db:
            raise ValueError("snr_max_db must exceed snr_min_db")
        for name, prob in self.missingness.items():
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"missingness[{name}]={prob} outside [0, 1]")
        return self


class DataPaths(BaseModel):  # pylint: disable=too-few-public-methods
    """Chemins des données d'un run."""
    manifest: Optional[str] = None
    eval_manifest: Optional[str] = None
    audio_root: Optional[str] = None

    def existing(self) -> List[str]:
        """Chemins renseignés (à vérifier au démarrage)."""
        return [p for p in (self.manifest, self.eval_manifest, self.audio_root) if p]


class RunConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Document de configuration unique d'un run."""
    encoders: List[EncoderConfig] = Field(default_factory=lambda: [EncoderConfig()])
    ampm: AmpmConfig = Field(default_factory=AmpmConfig)
    ncpm: NcpmConfig = Field(default_factory=NcpmConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataPaths = Field(default_factory=DataPaths)
    output_dir: str = "runs/default"

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _check_naming(self) -> "RunConfig":
        if not self.encoders:
            raise ValueError("at least one encoder is required")
        return self

    @property
    def registry_ref(self) -> str:
        """Identifiant intégré (M1/M5/M15) ou chemin du registre."""
        return self.train.supervision

    @property
    def model_name(self) -> str:
        """Nom F#C#M# du modèle."""
        supervision = self.train.supervision
        if supervision not in ("M1", "M5", "M15"):
            supervision = "M" + Path(supervision).stem
        return f"F{len(self.encoders)}{self.ampm.grouping}{supervision}"

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        """Charge et valide un document JSON."""
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"{path}: cannot read config ({e})") from e
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            first = e.errors()[0]
            loc = ".".join(str(part) for part in first["loc"])
            raise ConfigError(f"{path}: {loc}: {first['msg']}") from e

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Applique des surcharges pointées (`train.lr`) ; les drapeaux gagnent."""
        data = self.model_dump()
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for key in parents:
                node = node[key]
            node[leaf] = value
        try:
            return RunConfig.model_validate(data)
        except ValidationError as e:
            first = e.errors()[0]
            loc = ".".join(str(part) for part in first["loc"])
            raise ConfigError(f"override {loc}: {first['msg']}") from e

    def check_paths(self) -> None:
        """Vérifie que les chemins référencés existent au démarrage de la commande."""
        missing = [p for p in self.data.existing() if not Path(p).exists()]
        missing += [p for p in self.train.pair_source + self.train.native_pair_source
                    if not Path(p).exists()]
        for enc in self.encoders:
            if enc.feature_dir and not Path(enc.feature_dir).is_dir():
                missing.append(enc.feature_dir)
        if missing:
            raise ConfigError(f"missing paths: {', '.join(missing)}")

    def dump(self, path: Path) -> None:
        """Écrit la configuration effective à côté des artefacts du run."""
        path.write_text(json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
