// App wiring: load the bundle named by ?bundle=, build the GPU meshes, and
// steer the eye with pointer drags (x/y), wheel or pinch (z) and device
// orientation, clamped to the head volume every frame.

import { bannerMessageFor, httpFetcher, loadBundle, LoadedBundle } from "./bundle.js";
import { clampEye, headVolumeOf, Vec3 } from "./geomath.js";
import { PortalViewer } from "./viewer.js";

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

export function showBanner(message: string): void {
  const banner = $("banner");
  banner.textContent = message;
  banner.style.display = "block";
}

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const bundleUrl = params.get("bundle") ?? "bundle/";
  let bundle: LoadedBundle;
  try {
    bundle = await loadBundle(httpFetcher(bundleUrl));
  } catch (err) {
    showBanner(bannerMessageFor(err));
    return;
  }

  const canvas = $("view") as HTMLCanvasElement;
  let viewer: PortalViewer;
  try {
    viewer = new PortalViewer(canvas, bundle);
  } catch (err) {
    showBanner(bannerMessageFor(err));
    return;
  }

  const hv = headVolumeOf(bundle.manifest);
  let eye: Vec3 = [0, 0, 0];
  let tiltX = 0;
  let tiltY = 0;

  const applyEye = (e: Vec3): Vec3 => clampEye(e, hv);

  // drag across the full canvas sweeps the full head-volume range
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointerup", () => { dragging = false; });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const rect = canvas.getBoundingClientRect();
    const dx = (ev.clientX - lastX) / rect.width;
    const dy = (ev.clientY - lastY) / rect.height;
    lastX = ev.clientX;
    lastY = ev.clientY;
    eye = applyEye([
      eye[0] + dx * (hv.x[1] - hv.x[0]),
      eye[1] - dy * (hv.y[1] - hv.y[0]),
      eye[2],
    ]);
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const step = (hv.z[1] - hv.z[0]) / 40;
    eye = applyEye([eye[0], eye[1], eye[2] - Math.sign(ev.deltaY) * step]);
  }, { passive: false });

  window.addEventListener("deviceorientation", (ev) => {
    if (ev.gamma == null || ev.beta == null) return;
    tiltX = Math.max(-30, Math.min(30, ev.gamma)) / 30;
    tiltY = Math.max(-30, Math.min(30, ev.beta - 45)) / 30;
  });

  const toggle = $("anaglyph") as HTMLButtonElement;
  toggle.addEventListener("click", () => {
    viewer.anaglyph = !viewer.anaglyph;
    toggle.textContent = viewer.anaglyph ? "anaglyph: on" : "anaglyph: off";
  });

  const hud = $("hud");
  const frame = (): void => {
    const e = applyEye([
      eye[0] + tiltX * hv.x[1] * 0.5,
      eye[1] - tiltY * hv.y[1] * 0.5,
      eye[2],
    ]);
    viewer.draw(e);
    hud.textContent =
      `eye (${e[0].toFixed(3)}, ${e[1].toFixed(3)}, ${e[2].toFixed(3)})`;
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

start();
