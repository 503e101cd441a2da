"""FastAPI service wrapping the detection toolkit.

Every pipeline stage is one POST endpoint taking file paths plus options
and writing its outputs as new files; nothing mutates an input.  Errors
map to HTTP 400 with a machine-readable ``code`` of ``malformed_input`` or
``config_violation``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..corruption import CorruptionConfig, make_views
from ..errors import ConfigError, InputFormatError
from ..geometry import Box3, Detection, load_detections, save_detections
from ..metrics import build_report, load_report, report_markdown, save_report
from ..model import (
    ConvEncoderConfig,
    DetectorConfig,
    PostprocConfig,
    SwinConfig,
    infer,
    random_weights,
    zero_weights,
)
from ..nn import load_weights, save_weights
from ..phantom import PhantomSpec, generate, threshold_detect
from ..rand import Rng
from ..volume import LabelMask, Volume, connected_components, fuse_channels, load_nifti, load_raw, save_raw
from . import schemas


def _load_grid(path: str | Path, as_mask: bool = False):
    path = Path(path)
    if path.suffix == ".nii":
        return load_nifti(path, as_mask=as_mask)
    return load_raw(path, as_mask=as_mask)


def _detector_config(encoder: str, in_channels: int) -> DetectorConfig:
    return DetectorConfig(
        encoder=encoder,
        swin=SwinConfig(in_channels=in_channels),
        conv=ConvEncoderConfig(in_channels=in_channels),
    )


def _load_dataset(path: Path) -> dict:
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "cases" not in manifest:
        raise InputFormatError(f"{path}: not a dataset manifest (no 'cases' field)")
    return manifest


def _mask_to_boxes(mask: LabelMask) -> list[Box3]:
    return [inst.bounding_box for inst in connected_components(mask).instances]


def _gt_boxes_by_case(gt_path: Path, fallback_case_id: str, jobs: int) -> dict[str, list[Box3]]:
    """Route ground truth: detection JSON, dataset manifest, or one mask."""
    if gt_path.suffix == ".nii":
        return {fallback_case_id: _mask_to_boxes(load_nifti(gt_path, as_mask=True))}
    try:
        payload = json.loads(gt_path.read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{gt_path}: not valid JSON: {exc}") from exc
    if isinstance(payload, list):
        grouped: dict[str, list[Box3]] = {}
        for det in load_detections(gt_path):
            grouped.setdefault(det.case_id, []).append(det.box)
        return grouped
    if isinstance(payload, dict) and "cases" in payload:
        base = gt_path.parent
        cases = payload["cases"]

        def one(entry: dict) -> tuple[str, list[Box3]]:
            mask = load_raw(base / entry["lesion_mask"], as_mask=True)
            return entry["case_id"], _mask_to_boxes(mask)

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return dict(pool.map(one, cases))
    if isinstance(payload, dict) and "shape" in payload:
        return {fallback_case_id: _mask_to_boxes(load_raw(gt_path, as_mask=True))}
    raise InputFormatError(f"{gt_path}: unrecognized ground-truth format")


def create_app() -> FastAPI:
    app = FastAPI(title="lesionkit", version=__version__)

    @app.exception_handler(InputFormatError)
    @app.exception_handler(FileNotFoundError)
    async def _bad_input(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=400, content={"code": "malformed_input", "message": str(exc)})

    @app.exception_handler(ConfigError)
    async def _bad_config(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=400, content={"code": "config_violation", "message": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/phantom", response_model=schemas.PhantomResponse)
    def phantom_endpoint(req: schemas.PhantomRequest) -> schemas.PhantomResponse:
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        threshold = 0.0
        for index in range(req.cases):
            spec = PhantomSpec(
                shape=req.shape,
                seed=Rng(req.seed).spawn(index).seed,
                n_lesions=req.n_lesions,
                lesion_radius=req.lesion_radius,
                n_organs=req.n_organs,
                hot_organ_labels=req.hot_organ_labels,
                noise_sigma=req.noise_sigma,
            )
            threshold = spec.detect_threshold
            case = generate(spec)
            case_id = f"case_{index:04d}"
            case_dir = out_dir / case_id
            case_dir.mkdir(exist_ok=True)
            save_raw(case.pet, case_dir / "pet.json")
            save_raw(case.ct, case_dir / "ct.json")
            save_raw(case.anatomy, case_dir / "anatomy.json")
            save_raw(case.lesion_mask, case_dir / "lesion_mask.json")
            gt = [Detection(case_id=case_id, box=b, score=1.0, label=1) for b in case.gt_boxes]
            save_detections(gt, case_dir / "gt_boxes.json")
            entries.append(
                schemas.PhantomCaseFiles(
                    case_id=case_id,
                    pet=f"{case_id}/pet.json",
                    ct=f"{case_id}/ct.json",
                    anatomy=f"{case_id}/anatomy.json",
                    lesion_mask=f"{case_id}/lesion_mask.json",
                    gt_boxes=f"{case_id}/gt_boxes.json",
                    n_lesions=len(case.gt_boxes),
                )
            )
        manifest = {
            "cases": [entry.model_dump() for entry in entries],
            "suggested_threshold": threshold,
            "hot_organ_labels": list(req.hot_organ_labels),
            "seed": req.seed,
        }
        manifest_path = out_dir / "dataset.json"
        manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
        return schemas.PhantomResponse(dataset=str(manifest_path), cases=entries, suggested_threshold=threshold)

    @app.post("/corrupt", response_model=schemas.CorruptResponse)
    def corrupt_endpoint(req: schemas.CorruptRequest) -> schemas.CorruptResponse:
        vol = _load_grid(req.input)
        cfg = CorruptionConfig(
            n_regions=req.n_regions,
            region_size_range=req.region_size_range,
            dropout_fill_range=req.dropout_fill_range,
            keep_mode_prob=req.keep_mode_prob,
        )
        view1, view2 = make_views(vol.data, req.seed, cfg)
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, data in (("view1", view1), ("view2", view2)):
            out = Volume(data=data, channel_names=vol.channel_names, spacing=vol.spacing, origin=vol.origin)
            save_raw(out, out_dir / f"{name}.json")
            paths.append(str(out_dir / f"{name}.json"))
        return schemas.CorruptResponse(view1=paths[0], view2=paths[1])

    @app.post("/fuse", response_model=schemas.FuseResponse)
    def fuse_endpoint(req: schemas.FuseRequest) -> schemas.FuseResponse:
        pet = _load_grid(req.pet)
        ct = _load_grid(req.ct)
        anatomy = _load_grid(req.anatomy, as_mask=True) if req.anatomy else None
        fused = fuse_channels(pet, ct, anatomy)
        save_raw(fused, req.out)
        return schemas.FuseResponse(out=req.out, channels=list(fused.channel_names))

    @app.post("/mask-to-boxes", response_model=schemas.MaskToBoxesResponse)
    def mask_to_boxes_endpoint(req: schemas.MaskToBoxesRequest) -> schemas.MaskToBoxesResponse:
        if req.threshold is not None:
            vol = _load_grid(req.input)
            channel = req.channel if req.channel in vol.channel_names else vol.channel_names[0]
            anatomy = _load_grid(req.anatomy, as_mask=True) if req.anatomy else None
            detections = threshold_detect(
                vol,
                threshold=req.threshold,
                anatomy=anatomy,
                exclude_labels=req.exclude_labels,
                min_voxels=req.min_voxels,
                case_id=req.case_id,
                channel=channel,
            )
        else:
            mask = _load_grid(req.input, as_mask=True)
            instances = connected_components(mask)
            detections = [
                Detection(case_id=req.case_id, box=inst.bounding_box, score=1.0, label=1)
                for inst in instances.instances
                if inst.voxel_count >= req.min_voxels
            ]
        save_detections(detections, req.out)
        return schemas.MaskToBoxesResponse(out=req.out, n_boxes=len(detections))

    @app.post("/detect", response_model=schemas.DetectResponse)
    def detect_endpoint(req: schemas.DetectRequest) -> schemas.DetectResponse:
        store = load_weights(req.weights)
        post = PostprocConfig(min_score=req.min_score, min_volume_voxels=req.min_size, nms_iou=req.nms_iou)
        input_path = Path(req.input)
        detections: list[Detection] = []
        is_dataset = False
        if input_path.suffix == ".json":
            try:
                payload = json.loads(input_path.read_text())
            except json.JSONDecodeError as exc:
                raise InputFormatError(f"{input_path}: not valid JSON: {exc}") from exc
            is_dataset = isinstance(payload, dict) and "cases" in payload
        if is_dataset:
            manifest = _load_dataset(input_path)
            base = input_path.parent
            has_anatomy = req.anatomy and all("anatomy" in c for c in manifest["cases"])
            cfg = _detector_config(req.encoder, 3 if has_anatomy else 2)

            def one(entry: dict) -> list[Detection]:
                pet = load_raw(base / entry["pet"])
                ct = load_raw(base / entry["ct"])
                anatomy = load_raw(base / entry["anatomy"], as_mask=True) if has_anatomy else None
                fused = fuse_channels(pet, ct, anatomy)
                return infer(fused, cfg, store, post, case_id=entry["case_id"])

            with ThreadPoolExecutor(max_workers=req.jobs) as pool:
                for case_dets in pool.map(one, manifest["cases"]):
                    detections.extend(case_dets)
            n_cases = len(manifest["cases"])
        else:
            vol = _load_grid(input_path)
            cfg = _detector_config(req.encoder, vol.n_channels)
            detections = infer(vol, cfg, store, post, case_id=input_path.stem)
            n_cases = 1
        save_detections(detections, req.out)
        return schemas.DetectResponse(out=req.out, n_cases=n_cases, n_detections=len(detections))

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate_endpoint(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
        predictions = load_detections(req.pred)
        gt = _gt_boxes_by_case(Path(req.gt), req.gt_case_id, req.jobs)
        report = build_report(
            predictions,
            gt,
            fppi_points=req.fppi_points,
            map_step=req.map_step,
            extra_ious=req.extra_ious,
        )
        save_report(report, req.out, name=Path(req.pred).stem)
        markdown = report_markdown([(Path(req.pred).stem, report)])
        return schemas.EvaluateResponse(
            out=req.out,
            markdown=markdown,
            froc_at_01=report.froc_at_01,
            froc_at_05=report.froc_at_05,
            ap_at_01=report.ap_at_01,
            ap_at_05=report.ap_at_05,
            map_01_05=report.map_01_05,
        )

    @app.post("/compare", response_model=schemas.CompareResponse)
    def compare_endpoint(req: schemas.CompareRequest) -> schemas.CompareResponse:
        names = req.names or [Path(p).stem for p in req.reports]
        if len(names) != len(req.reports):
            raise ConfigError(f"{len(req.names or [])} names for {len(req.reports)} reports")
        rows = [(name, load_report(path)) for name, path in zip(names, req.reports)]
        markdown = report_markdown(rows)
        Path(req.out).write_text(markdown)
        return schemas.CompareResponse(out=req.out, markdown=markdown)

    @app.post("/weights/init", response_model=schemas.InitWeightsResponse)
    def init_weights_endpoint(req: schemas.InitWeightsRequest) -> schemas.InitWeightsResponse:
        cfg = _detector_config(req.encoder, 3 if req.anatomy else 2)
        if req.zero:
            store = zero_weights(cfg, req.image_shape, include_ssl_head=req.include_ssl_head)
        else:
            store = random_weights(cfg, req.image_shape, seed=req.seed, include_ssl_head=req.include_ssl_head)
        save_weights(store, req.out)
        return schemas.InitWeightsResponse(out=req.out, n_tensors=len(store))

    return app


app = create_app()
