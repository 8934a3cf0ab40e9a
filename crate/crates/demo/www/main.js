import init, { laser_speckle, twin_speckle, joint_table } from "./pkg/biphoton_demo.js";

const $ = (id) => document.getElementById(id);
const views = [
  ["laser", laser_speckle, (s) => `Grain ${s.toFixed(2)} mm⁻¹.`],
  ["twin", twin_speckle, (s) => `Grain ${s.toFixed(2)} mm⁻¹.`],
  ["table", joint_table, (s) => `Contrast ${s.toFixed(2)}.`],
];

function paint(canvas, map, log) {
  const w = map.width;
  const v = map.values;
  let top = 0;
  for (const x of v) top = Math.max(top, x);
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(w, w);
  for (let i = 0; i < v.length; i++) {
    let t = top > 0 ? v[i] / top : 0;
    if (log) t = t > 1e-4 ? 1 + Math.log10(t) / 4 : 0;
    const c = Math.round(255 * Math.min(1, Math.max(0, t)));
    img.data.set([c, Math.round(c * 0.85), Math.round(c * 0.6), 255], 4 * i);
  }
  ctx.putImageData(img, 0, 0);
}

function update() {
  for (const id of ["rms", "corr"]) $(id).nextElementSibling.textContent = $(id).value;
  const args = [+$("rms").value, +$("corr").value, Math.max(0, +$("seed").value | 0)];
  const t0 = performance.now();
  try {
    for (const [id, run, note] of views) {
      const map = run(...args);
      paint($(id), map, $("log").checked);
      $(`${id}-note`).textContent = Number.isFinite(map.summary) ? note(map.summary) : "";
      map.free();
    }
    $("status").textContent = `${Math.round(performance.now() - t0)} ms`;
  } catch (e) {
    $("status").textContent = String(e);
  }
}

let pending = false;
function schedule() {
  if (pending) return;
  pending = true;
  requestAnimationFrame(() => { pending = false; update(); });
}

await init();
for (const id of ["rms", "corr", "seed", "log"]) $(id).addEventListener("input", schedule);
update();
