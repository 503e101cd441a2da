"""Pydantic request/response models for the HTTP service.

Volumes never travel over the wire; requests carry filesystem paths and
the service reads/writes next to them, so the client and server must share
a filesystem (the CLI defaults to an in-process transport, where that is
trivially true).
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class PhantomRequest(BaseModel):
    out_dir: str
    seed: int = 0
    cases: int = Field(default=1, ge=1)
    shape: tuple[int, int, int] = (96, 96, 96)
    n_lesions: int = Field(default=3, ge=0)
    lesion_radius: tuple[float, float] = (3.0, 8.0)
    n_organs: int = Field(default=5, ge=0)
    hot_organ_labels: tuple[int, ...] = (5, 90, 104)
    noise_sigma: float = 0.05


class PhantomCaseFiles(BaseModel):
    case_id: str
    pet: str
    ct: str
    anatomy: str
    lesion_mask: str
    gt_boxes: str
    n_lesions: int


class PhantomResponse(BaseModel):
    dataset: str
    cases: list[PhantomCaseFiles]
    suggested_threshold: float


class CorruptRequest(BaseModel):
    input: str
    out_dir: str
    seed: int = 0
    n_regions: int = Field(default=8, ge=1)
    region_size_range: tuple[int, int] = (4, 16)
    dropout_fill_range: tuple[float, float] = (0.0, 0.2)
    keep_mode_prob: float = Field(default=0.5, ge=0.0, le=1.0)


class CorruptResponse(BaseModel):
    view1: str
    view2: str


class FuseRequest(BaseModel):
    pet: str
    ct: str
    anatomy: str | None = None
    out: str


class FuseResponse(BaseModel):
    out: str
    channels: list[str]


class MaskToBoxesRequest(BaseModel):
    input: str
    out: str
    case_id: str = "case"
    threshold: float | None = None
    channel: str = "pet"
    anatomy: str | None = None
    exclude_labels: tuple[int, ...] = ()
    min_voxels: int = Field(default=1, ge=1)


class MaskToBoxesResponse(BaseModel):
    out: str
    n_boxes: int


class DetectRequest(BaseModel):
    input: str  # fused volume (RAW+JSON) or a phantom dataset manifest
    weights: str
    out: str
    encoder: str = "swin"
    anatomy: bool = True
    min_score: float = Field(default=0.05, ge=0.0)
    min_size: float = Field(default=0.0, ge=0.0)
    nms_iou: float = Field(default=0.5, gt=0.0, le=1.0)
    jobs: int = Field(default=1, ge=1)


class DetectResponse(BaseModel):
    out: str
    n_cases: int
    n_detections: int


class EvaluateRequest(BaseModel):
    pred: str
    gt: str  # detection JSON, dataset manifest, or a single mask file
    out: str
    gt_case_id: str = "case"
    fppi_points: tuple[float, ...] = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    map_step: float = Field(default=0.05, gt=0.0)
    extra_ious: tuple[float, ...] = ()
    jobs: int = Field(default=1, ge=1)


class EvaluateResponse(BaseModel):
    out: str
    markdown: str
    froc_at_01: float
    froc_at_05: float
    ap_at_01: float
    ap_at_05: float
    map_01_05: float


class CompareRequest(BaseModel):
    reports: list[str] = Field(min_length=2)
    names: list[str] | None = None
    out: str


class CompareResponse(BaseModel):
    out: str
    markdown: str


class InitWeightsRequest(BaseModel):
    out: str
    encoder: str = "swin"
    image_shape: tuple[int, int, int] = (96, 96, 96)
    anatomy: bool = True
    zero: bool = False
    seed: int = 0
    include_ssl_head: bool = False


class InitWeightsResponse(BaseModel):
    out: str
    n_tensors: int
