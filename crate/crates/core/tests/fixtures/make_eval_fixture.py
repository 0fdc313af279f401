"""Writes the 3-image evaluation fixture and its expected metrics.

Expected values come from pycocotools (COCOeval, bbox). Boxes avoid areas of
exactly 32**2 and 96**2, where area-range bounds differ between conventions.

Usage: python3 make_eval_fixture.py  (writes next to this file)
"""

import contextlib
import io
import json
import os

from pycocotools.coco import COCO
from pycocotools.cocoeval import COCOeval

HERE = os.path.dirname(os.path.abspath(__file__))
CLASSES = ["Button", "Text"]
CANVAS = (400.0, 400.0)

# image id -> list of (x1, y1, x2, y2, class)
GTS = {
    1: [
        (10, 10, 30, 30, "Button"),      # small, 400
        (50, 50, 150, 100, "Text"),      # medium, 5000
        (200, 200, 350, 330, "Button"),  # large, 19500
    ],
    2: [
        (0, 0, 120, 100, "Text"),        # large, 12000
        (130, 10, 170, 50, "Text"),      # medium, 1600
        (300, 300, 320, 325, "Button"),  # small, 500
    ],
    3: [
        (20, 20, 60, 80, "Button"),      # medium, 2400
        (100, 100, 110, 115, "Button"),  # small, 150
    ],
}

# image id -> list of (x1, y1, x2, y2, class, score)
DETS = {
    1: [
        (11, 11, 30, 31, "Button", 0.9),     # TP at most thresholds
        (55, 50, 150, 105, "Text", 0.8),     # TP, IoU ~0.86
        (210, 190, 350, 330, "Button", 0.7), # TP, IoU ~0.87
        (60, 60, 90, 90, "Button", 0.6),     # FP, wrong class region
        (200, 200, 300, 300, "Button", 0.5), # weak overlap, FP
    ],
    2: [
        (0, 0, 100, 100, "Text", 0.95),      # IoU ~0.83
        (128, 12, 172, 52, "Text", 0.4),     # IoU ~0.82
        (300, 300, 320, 325, "Text", 0.85),  # wrong class
        (290, 295, 322, 330, "Button", 0.3), # loose, IoU ~0.45
    ],
    3: [
        (20, 25, 60, 85, "Button", 0.65),    # IoU ~0.85
        (100, 100, 111, 116, "Button", 0.65),# tie score, IoU ~0.85
        (20, 20, 60, 80, "Text", 0.2),       # wrong class, exact box
        (5, 300, 395, 395, "Text", 0.55),    # large FP
    ],
}


def native(images, with_scores):
    layouts = []
    for image_id in sorted(images):
        comps = []
        for entry in images[image_id]:
            comp = {"bbox": [float(v) for v in entry[:4]], "class": entry[4]}
            if with_scores:
                comp["score"] = entry[5]
            comps.append(comp)
        layouts.append({"id": str(image_id), "width": CANVAS[0], "height": CANVAS[1], "components": comps})
    return {"classes": CLASSES, "layouts": layouts}


def xywh(entry):
    x1, y1, x2, y2 = entry[:4]
    return [float(x1), float(y1), float(x2 - x1), float(y2 - y1)]


def main():
    for entries in GTS.values():
        for e in entries:
            w, h = e[2] - e[0], e[3] - e[1]
            assert w * h not in (32 * 32, 96 * 96)
    cat_ids = {name: i + 1 for i, name in enumerate(CLASSES)}
    gt = {
        "images": [{"id": i, "width": CANVAS[0], "height": CANVAS[1]} for i in sorted(GTS)],
        "categories": [{"id": cat_ids[n], "name": n} for n in CLASSES],
        "annotations": [],
    }
    ann_id = 1
    for image_id in sorted(GTS):
        for e in GTS[image_id]:
            box = xywh(e)
            gt["annotations"].append({
                "id": ann_id, "image_id": image_id, "category_id": cat_ids[e[4]],
                "bbox": box, "area": box[2] * box[3], "iscrowd": 0,
            })
            ann_id += 1
    dets = [
        {"image_id": i, "category_id": cat_ids[e[4]], "bbox": xywh(e), "score": e[5]}
        for i in sorted(DETS) for e in DETS[i]
    ]
    with contextlib.redirect_stdout(io.StringIO()):
        coco_gt = COCO()
        coco_gt.dataset = gt
        coco_gt.createIndex()
        coco_dt = coco_gt.loadRes(dets)
        ev = COCOeval(coco_gt, coco_dt, "bbox")
        ev.evaluate()
        ev.accumulate()
        ev.summarize()
    names = ["ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large",
             "ar1", "ar10", "ar100", "ar_small", "ar_medium", "ar_large"]
    expected = {n: float(v) for n, v in zip(names, ev.stats)}

    def dump(name, obj):
        with open(os.path.join(HERE, name), "w") as f:
            json.dump(obj, f, indent=2)
            f.write("\n")

    dump("eval_gt.json", native(GTS, False))
    dump("eval_dets.json", native(DETS, True))
    dump("eval_expected.json", expected)


if __name__ == "__main__":
    main()
