import init, { scanImpulse, oneCycle, syntheticTile } from "./pkg/ulmv_web.js";

const $ = (id) => document.getElementById(id);
const LEN = 128;
const TILE = 64;

function showValues() {
  for (const out of document.querySelectorAll("output[for]")) {
    out.textContent = $(out.htmlFor).value;
  }
}

function plot(canvas, series, colors) {
  const g = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  g.clearRect(0, 0, w, h);
  const max = Math.max(...series.flatMap((s) => Array.from(s))) || 1;
  series.forEach((s, k) => {
    g.strokeStyle = colors[k];
    g.lineWidth = k === 0 ? 4 : 1.5;
    g.beginPath();
    s.forEach((v, i) => {
      const x = (i / Math.max(s.length - 1, 1)) * (w - 20) + 10;
      const y = h - 10 - (v / max) * (h - 20);
      i === 0 ? g.moveTo(x, y) : g.lineTo(x, y);
    });
    g.stroke();
  });
}

function drawScan() {
  const decay = +$("decay").value;
  const step = +$("step").value;
  const forget = +$("forget").value;
  const seq = scanImpulse(LEN, decay, step, forget, false);
  const par = scanImpulse(LEN, decay, step, forget, true);
  plot($("scan"), [seq, par], ["#fca5a5", "#1d4ed8"]);
  let diff = 0;
  seq.forEach((v, i) => (diff = Math.max(diff, Math.abs(v - par[i]))));
  $("scan-diff").textContent = `sequential (thick) vs parallel (thin): max |difference| = ${diff.toExponential(2)}`;
}

function drawLr() {
  const steps = 300;
  try {
    const lr = oneCycle(steps, +$("maxlr").value, +$("pct").value, +$("div").value, +$("fdiv").value);
    plot($("lr"), [lr], ["#047857"]);
    $("lr-note").textContent = `start ${lr[0].toExponential(3)}, peak ${Math.max(...lr).toExponential(3)}, end ${lr[steps - 1].toExponential(3)}`;
  } catch (e) {
    $("lr-note").textContent = String(e);
  }
}

function paint(id, bytes) {
  const g = $(id).getContext("2d");
  g.putImageData(new ImageData(new Uint8ClampedArray(bytes), TILE, TILE), 0, 0);
}

function drawTiles() {
  const seed = Math.max(0, Math.floor(+$("seed").value));
  const notes = [];
  for (const label of [0, 1]) {
    try {
      const t = syntheticTile(label, seed, TILE, +$("white").value, 0.04, +$("mintissue").value);
      paint(`t${label}`, t.rgba());
      paint(`m${label}`, t.mask());
      notes.push(`class ${label}: tissue ${(100 * t.tissueFraction).toFixed(1)}%, ${t.keep ? "kept" : "discarded"}`);
      t.free();
    } catch (e) {
      notes.push(String(e));
    }
  }
  $("tile-note").textContent = notes.join("; ");
}

function redraw() {
  showValues();
  drawScan();
  drawLr();
  drawTiles();
}

await init();
for (const el of document.querySelectorAll("input")) {
  el.addEventListener("input", redraw);
}
redraw();
