import init, { render_sample, lr_schedule_curve, threshold_explorer } from "./pkg/mitoslice_demo.js";

const $ = (id) => document.getElementById(id);

function drawRgba(canvas, bytes, side) {
  const ctx = canvas.getContext("2d");
  const off = new OffscreenCanvas(side, side);
  const octx = off.getContext("2d");
  octx.putImageData(new ImageData(new Uint8ClampedArray(bytes), side, side), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function updateSample() {
  const seed = Number($("s-seed").value);
  const index = Number($("s-index").value);
  const atypical = $("s-class").checked;
  const ratio = Number($("s-ratio").value);
  $("s-seed-out").value = seed;
  $("s-index-out").value = index;
  $("s-class-out").value = atypical ? "AMF" : "NMF";
  $("s-ratio-out").value = ratio.toFixed(2);

  const preview = render_sample(seed, index, atypical, ratio);
  const canvas = $("s-original");
  drawRgba(canvas, preview.original, preview.side);
  const scale = canvas.width / preview.side;
  const ctx = canvas.getContext("2d");
  ctx.strokeStyle = "#e63946";
  ctx.lineWidth = 2;
  ctx.strokeRect(
    preview.crop_offset * scale,
    preview.crop_offset * scale,
    preview.crop_side * scale,
    preview.crop_side * scale
  );
  drawRgba($("s-processed"), preview.processed, 128);
  $("s-geom").textContent =
    `original 128×128 — crop ${preview.crop_side}×${preview.crop_side} at offset ${preview.crop_offset}`;
}

function updateSchedule() {
  const lrMax = Number($("l-lrmax").value) * 1e-4;
  const lrMin = Number($("l-lrmin").value) * 1e-4;
  const epochs = Number($("l-epochs").value);
  $("l-lrmax-out").value = lrMax.toExponential(1);
  $("l-lrmin-out").value = lrMin === 0 ? "0" : lrMin.toExponential(1);
  $("l-epochs-out").value = epochs;

  const floor = Math.min(lrMin, lrMax);
  const dense = lr_schedule_curve(lrMax, floor, 400);
  const perEpoch = lr_schedule_curve(lrMax, floor, epochs);

  const canvas = $("l-canvas");
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 28;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad / 2, w - 1.5 * pad, h - 1.5 * pad);
  const top = lrMax * 1.05 || 1;
  const x = (t, total) => pad + (t / total) * (w - 1.5 * pad);
  const y = (lr) => pad / 2 + (1 - lr / top) * (h - 1.5 * pad);

  ctx.strokeStyle = "#1d6fb8";
  ctx.lineWidth = 2;
  ctx.beginPath();
  dense.forEach((lr, t) => (t === 0 ? ctx.moveTo(x(t, 400), y(lr)) : ctx.lineTo(x(t, 400), y(lr))));
  ctx.stroke();

  ctx.fillStyle = "#e63946";
  perEpoch.forEach((lr, e) => {
    ctx.beginPath();
    ctx.arc(x(e, epochs), y(lr), 4, 0, 2 * Math.PI);
    ctx.fill();
  });

  ctx.fillStyle = "#555";
  ctx.font = "11px system-ui";
  ctx.fillText(lrMax.toExponential(1), 2, y(lrMax) + 4);
  ctx.fillText("0", 14, y(0) + 4);
  ctx.fillText("epoch 0", pad, h - 2);
  ctx.fillText(`epoch ${epochs}`, w - pad - 40, h - 2);
}

function updateThreshold() {
  const seed = Number($("t-seed").value);
  const n = Number($("t-n").value);
  const sep = Number($("t-sep").value);
  const thr = Number($("t-thr").value);
  $("t-seed-out").value = seed;
  $("t-n-out").value = n;
  $("t-sep-out").value = sep.toFixed(1);
  $("t-thr-out").value = thr.toFixed(2);

  const report = JSON.parse(threshold_explorer(seed, n, sep, thr));
  const fmt = (v) => (v === null || v === undefined ? "n/a" : v.toFixed(4));
  $("m-auc").textContent = fmt(report.roc_auc);
  $("m-acc").textContent = fmt(report.accuracy);
  $("m-sens").textContent = fmt(report.sensitivity);
  $("m-spec").textContent = fmt(report.specificity);
  $("m-ba").textContent = fmt(report.balanced_accuracy);
  $("m-counts").textContent = report.counts.join(" / ");

  const canvas = $("t-canvas");
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 24;
  ctx.clearRect(0, 0, w, h);
  const x = (fpr) => pad + fpr * (w - 2 * pad);
  const y = (tpr) => h - pad - tpr * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(x(0), y(0));
  ctx.lineTo(x(1), y(1));
  ctx.stroke();
  ctx.setLineDash([]);

  ctx.strokeStyle = "#1d6fb8";
  ctx.lineWidth = 2;
  ctx.beginPath();
  report.roc.forEach(([fpr, tpr], i) =>
    i === 0 ? ctx.moveTo(x(fpr), y(tpr)) : ctx.lineTo(x(fpr), y(tpr))
  );
  ctx.stroke();

  const [fpr, tpr] = report.operating_point;
  ctx.fillStyle = "#e63946";
  ctx.beginPath();
  ctx.arc(x(fpr), y(tpr), 5, 0, 2 * Math.PI);
  ctx.fill();

  ctx.fillStyle = "#555";
  ctx.font = "11px system-ui";
  ctx.fillText("FPR →", w / 2 - 16, h - 6);
  ctx.save();
  ctx.translate(10, h / 2 + 16);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText("TPR →", 0, 0);
  ctx.restore();
}

async function main() {
  await init();
  document.getElementById("loading").remove();
  for (const id of ["s-seed", "s-index", "s-class", "s-ratio"]) {
    $(id).addEventListener("input", updateSample);
  }
  for (const id of ["l-lrmax", "l-lrmin", "l-epochs"]) {
    $(id).addEventListener("input", updateSchedule);
  }
  for (const id of ["t-seed", "t-n", "t-sep", "t-thr"]) {
    $(id).addEventListener("input", updateThreshold);
  }
  updateSample();
  updateSchedule();
  updateThreshold();
}

main().catch((err) => {
  document.getElementById("loading").textContent =
    `Failed to load the WebAssembly module: ${err}. Run build-demo.sh first.`;
});
