import init, { scene, navigate, localize, follow_vessel } from "./pkg/retinav_web.js";

const canvas = document.getElementById("view");
const ctx = canvas.getContext("2d");
const out = document.getElementById("out");
const $ = (id) => document.getElementById(id);

let cam, eye, sclera, startTip;
let overlay = { path: [], goal: null, landing: null, points: [], fit: null, waypoints: [] };
let vesselClicks = [];

const sub = (a, b) => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
const dot = (a, b) => a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
const cross = (a, b) => [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
const unit = (a) => { const n = Math.hypot(...a); return a.map((x) => x / n); };

// Same image axes as the Rust camera model.
function axes() {
  const v = cam.view_direction;
  const hint = Math.abs(v[1]) < 0.9 ? [0, -1, 0] : [0, 0, 1];
  const right = unit(cross(hint, v));
  return { right, down: cross(v, right) };
}

function project(p) {
  const { right, down } = axes();
  const rel = sub(p, cam.optical_center);
  return [cam.width / 2 + dot(rel, right) / cam.scale, cam.height / 2 + dot(rel, down) / cam.scale];
}

function dotAt(p, color, r = 3) {
  const [x, y] = project(p);
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(x, y, r, 0, 2 * Math.PI);
  ctx.fill();
}

function square(px, color, s = 6) {
  ctx.strokeStyle = color;
  ctx.strokeRect(px[0] - s / 2, px[1] - s / 2, s, s);
}

function polyline(points, color) {
  if (points.length < 2) return;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  points.forEach((p, i) => {
    const [x, y] = project(p);
    if (i === 0) ctx.moveTo(x, y); else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

function draw() {
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const [cx, cy] = project(eye.center);
  ctx.fillStyle = "#5a1d14";
  ctx.beginPath();
  ctx.arc(cx, cy, eye.radius / cam.scale, 0, 2 * Math.PI);
  ctx.fill();
  if (overlay.fit) {
    const [fx, fy] = project(overlay.fit.center);
    ctx.strokeStyle = "#4cf";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.arc(fx, fy, overlay.fit.radius / cam.scale, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.setLineDash([]);
  }
  overlay.points.forEach((p) => dotAt(p, "#ff0", 2));
  dotAt(sclera, "#fff", 4);
  dotAt(startTip, "#8f8", 3);
  polyline(overlay.path, "#8f8");
  overlay.waypoints.forEach((p) => dotAt(p, "#4cf", 3));
  vesselClicks.forEach((px) => square(px, "#4cf"));
  if (overlay.goal) square(overlay.goal, "#fff", 8);
  if (overlay.landing) square(project(overlay.landing), "#39f", 8);
}

function show(text, isError = false) {
  out.textContent = text;
  out.className = isError ? "err" : "";
}

function run(fn) {
  try {
    fn();
  } catch (e) {
    show(String(e.message || e), true);
  }
  draw();
}

const sclW = () => (Number($("ws").value) === 0 ? 0 : 10 ** Number($("ws").value));

canvas.addEventListener("click", (ev) => {
  const r = canvas.getBoundingClientRect();
  const px = [(ev.clientX - r.left) * (canvas.width / r.width), (ev.clientY - r.top) * (canvas.height / r.height)];
  const mode = document.querySelector("input[name=mode]:checked").value;
  if (mode === "vessel") {
    vesselClicks.push(px);
    show(`${vesselClicks.length} vessel waypoint(s); press Follow path`);
    draw();
    return;
  }
  run(() => {
    overlay.goal = px;
    const res = JSON.parse(navigate(px[0], px[1], Number($("sigma").value), sclW(), Number($("seed").value)));
    overlay.path = res.path;
    overlay.landing = res.entry.landing_mm;
    const e = res.entry;
    show(
      `goal (${px[0].toFixed(1)}, ${px[1].toFixed(1)}) px\n` +
      `xy error ${e.error_xy_mm.toFixed(4)} mm (${e.error_x_px.toFixed(2)}, ${e.error_y_px.toFixed(2)} px)\n` +
      `z error ${e.error_z_mm.toFixed(4)} mm\n` +
      `sclera mean ${e.mean_sclera_mm.toFixed(4)} max ${e.max_sclera_mm.toFixed(4)} mm\n` +
      `${e.replans} replans, ${e.solver_iterations} solver iterations, ${e.sim_steps} steps`,
    );
  });
});

$("localize").addEventListener("click", () => run(() => {
  const res = JSON.parse(localize(Number($("samples").value), Number($("outliers").value), Number($("seed").value)));
  overlay.points = res.points;
  overlay.fit = res.fit;
  const e = res.entry;
  show(
    `fitted centre (${e.fitted_center_mm.map((x) => x.toFixed(3)).join(", ")}) mm\n` +
    `radius ${e.fitted_radius_mm.toFixed(3)} mm\n` +
    `centre error ${e.center_error_norm_mm.toFixed(4)} mm, radius error ${e.radius_error_mm.toFixed(4)} mm\n` +
    `${e.inliers}/${e.usable} inliers`,
  );
}));

$("follow").addEventListener("click", () => run(() => {
  const res = JSON.parse(follow_vessel(new Float64Array(vesselClicks.flat()), Number($("hover").value)));
  overlay.path = res.path;
  overlay.waypoints = res.waypoints;
  overlay.fit = res.fit;
  const e = res.entry;
  show(
    `${e.waypoints} waypoints at radius ${e.hover_radius_mm.toFixed(3)} mm\n` +
    `max tracking error (${e.max_tracking_error_mm.map((x) => x.toFixed(4)).join(", ")}) mm\n` +
    `penetrations ${e.penetrations}, mean sclera ${e.mean_sclera_mm.toFixed(4)} mm`,
  );
}));

$("clear").addEventListener("click", () => {
  vesselClicks = [];
  overlay = { path: [], goal: null, landing: null, points: [], fit: overlay.fit, waypoints: [] };
  draw();
});

$("sigma").addEventListener("input", () => { $("sigma-v").textContent = $("sigma").value; });
$("ws").addEventListener("input", () => { $("ws-v").textContent = sclW() === 0 ? "0" : `1e${$("ws").value}`; });

await init();
const s = JSON.parse(scene());
cam = s.camera;
eye = s.eye;
sclera = s.sclera_point;
startTip = s.start_tip;
show("click the retina");
draw();
