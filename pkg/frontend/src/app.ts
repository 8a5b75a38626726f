import { ApiClient } from "./api.js";
import { rasterizeStroke } from "./raster.js";
import { simplifyPolyline, snapPoint } from "./serialize.js";
import { AnnotationStore } from "./state.js";
import { colorFor, type CanvasStroke, type Polarity } from "./types.js";

/**
 * Browser entry point. Wires the canvas, the stroke tools, the round
 * submission flow, and the timeline onto the DOM shell in index.html.
 */
export async function boot(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const base = params.get("api") ?? "http://127.0.0.1:8008";
  const api = new ApiClient(base);

  const sessionList = document.getElementById("sessions") as HTMLSelectElement;
  const canvas = document.getElementById("canvas") as HTMLCanvasElement;
  const objectInput = document.getElementById("object") as HTMLInputElement;
  const polarityInput = document.getElementById("polarity") as HTMLSelectElement;
  const radiusInput = document.getElementById("radius") as HTMLInputElement;
  const opacityInput = document.getElementById("opacity") as HTMLInputElement;
  const frameSlider = document.getElementById("frame") as HTMLInputElement;
  const submitButton = document.getElementById("submit") as HTMLButtonElement;
  const clearButton = document.getElementById("clear") as HTMLButtonElement;
  const progressBar = document.getElementById("progress") as HTMLProgressElement;
  const noticeBox = document.getElementById("notice") as HTMLElement;
  const timelineBox = document.getElementById("timeline") as HTMLElement;

  const sessions = await api.listSessions();
  for (const s of sessions) {
    const option = document.createElement("option");
    option.value = s.id;
    option.textContent = `${s.id} (${s.frames} frames, round ${s.round})`;
    sessionList.appendChild(option);
  }
  if (sessions.length === 0) {
    noticeBox.textContent = "no sessions on the server; create one via the API";
    return;
  }

  let store = new AnnotationStore(api, sessions[0].id);
  sessionList.onchange = async () => {
    store = new AnnotationStore(api, sessionList.value);
    await openSession();
  };

  const ctx = canvas.getContext("2d")!;
  let drawing: [number, number][] | null = null;
  const frameImage = new Image();
  const maskImage = new Image();
  frameImage.crossOrigin = maskImage.crossOrigin = "anonymous";

  async function openSession(): Promise<void> {
    const handle = await store.refresh();
    canvas.width = handle.width;
    canvas.height = handle.height;
    frameSlider.max = String(handle.frames - 1);
    frameSlider.value = "0";
    store.selectFrame(0);
    await showFrame();
    renderTimeline();
  }

  function colorizeMask(img: HTMLImageElement): HTMLCanvasElement {
    const off = document.createElement("canvas");
    off.width = canvas.width;
    off.height = canvas.height;
    const octx = off.getContext("2d")!;
    octx.drawImage(img, 0, 0);
    const data = octx.getImageData(0, 0, off.width, off.height);
    for (let i = 0; i < data.data.length; i += 4) {
      const label = data.data[i];
      if (label === 0) {
        data.data[i + 3] = 0; // background transparent
        continue;
      }
      const hex = colorFor(label);
      data.data[i] = parseInt(hex.slice(1, 3), 16);
      data.data[i + 1] = parseInt(hex.slice(3, 5), 16);
      data.data[i + 2] = parseInt(hex.slice(5, 7), 16);
      data.data[i + 3] = 255;
    }
    octx.putImageData(data, 0, 0);
    return off;
  }

  function redraw(): void {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (frameImage.complete && frameImage.naturalWidth > 0) {
      ctx.drawImage(frameImage, 0, 0);
    }
    if (maskImage.complete && maskImage.naturalWidth > 0) {
      ctx.globalAlpha = store.view.overlayOpacity;
      ctx.drawImage(colorizeMask(maskImage), 0, 0);
      ctx.globalAlpha = 1.0;
    }
    const pending = drawing
      ? store.strokes.concat([currentStroke(drawing)])
      : store.strokes;
    for (const stroke of pending) {
      drawStrokePreview(stroke);
    }
  }

  function drawStrokePreview(stroke: CanvasStroke): void {
    ctx.fillStyle = stroke.polarity === "pos" ? colorFor(stroke.object) : "#d11";
    for (const cell of rasterizeStroke(stroke, canvas.height, canvas.width)) {
      const y = Math.floor(cell / canvas.width);
      const x = cell % canvas.width;
      ctx.fillRect(x, y, 1, 1);
    }
  }

  function currentStroke(points: [number, number][]): CanvasStroke {
    return {
      object: Number(objectInput.value),
      polarity: polarityInput.value as Polarity,
      radius: Number(radiusInput.value),
      points,
    };
  }

  async function showFrame(): Promise<void> {
    await new Promise<void>((resolve) => {
      frameImage.onload = () => resolve();
      frameImage.onerror = () => resolve();
      frameImage.src = store.frameUrl(store.view.frame);
    });
    const url = store.maskUrl(store.view.frame);
    if (url) {
      await new Promise<void>((resolve) => {
        maskImage.onload = () => resolve();
        maskImage.onerror = () => resolve();
        maskImage.src = url;
      });
    } else {
      maskImage.removeAttribute("src");
    }
    redraw();
  }

  function renderTimeline(): void {
    timelineBox.textContent = "";
    for (const entry of store.timeline) {
      const item = document.createElement("button");
      item.textContent = `round ${entry.round} @ frame ${entry.annotatedFrame}`;
      item.onclick = async () => {
        store.selectRound(entry.round);
        await showFrame();
      };
      timelineBox.appendChild(item);
    }
  }

  function canvasPoint(event: PointerEvent): [number, number] {
    const rect = canvas.getBoundingClientRect();
    const x = ((event.clientX - rect.left) / rect.width) * canvas.width;
    const y = ((event.clientY - rect.top) / rect.height) * canvas.height;
    return snapPoint(x, y, canvas.width, canvas.height);
  }

  canvas.onpointerdown = (event) => {
    canvas.setPointerCapture(event.pointerId);
    drawing = [canvasPoint(event)];
  };
  canvas.onpointermove = (event) => {
    if (!drawing) return;
    drawing.push(canvasPoint(event));
    redraw();
  };
  canvas.onpointerup = () => {
    if (!drawing) return;
    const simplified = simplifyPolyline(drawing, 1.0);
    store.addStroke(currentStroke(simplified));
    drawing = null;
    redraw();
  };

  clearButton.onclick = () => {
    store.clearStrokes();
    redraw();
  };

  opacityInput.oninput = () => {
    store.view.overlayOpacity = Number(opacityInput.value) / 100;
    redraw();
  };

  frameSlider.oninput = async () => {
    store.selectFrame(Number(frameSlider.value));
    await showFrame();
  };

  submitButton.onclick = async () => {
    const round = await store.submitRound();
    noticeBox.textContent = store.notice ?? "";
    if (round === null) return;
    progressBar.max = store.progress.total;
    progressBar.value = 0;

    const finish = async () => {
      renderTimeline();
      noticeBox.textContent = store.notice ?? "";
      await showFrame();
    };
    if ("WebSocket" in globalThis) {
      const close = api.events(store.sessionId, (event) => {
        store.onEvent(event);
        progressBar.value = store.progress.framesDone;
        if (event.done || event.state === "error") {
          close();
          void finish();
        }
      });
    } else {
      await store.waitRoundComplete(round);
      await finish();
    }
  };

  await openSession();
}

if (typeof document !== "undefined") {
  void boot();
}
