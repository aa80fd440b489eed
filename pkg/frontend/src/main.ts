import { ApiConfig, RetryPolicy } from './api.js';
import { computeOverlayRect } from './overlay.js';
import { ReviewQueue } from './queue.js';

const policy: RetryPolicy = { attempts: 4, baseDelayMs: 500 };

let queue: ReviewQueue | null = null;
let booting = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function currentConfig(): ApiConfig {
  const token = el<HTMLInputElement>('token').value.trim();
  return { baseUrl: '', token: token === '' ? null : token };
}

function positionOverlay(): void {
  const img = el<HTMLImageElement>('screenshot');
  const overlay = el<HTMLDivElement>('overlay');
  const item = queue?.current ?? null;
  if (item === null || img.clientWidth === 0 || img.clientHeight === 0) {
    overlay.style.display = 'none';
    return;
  }
  const rect = computeOverlayRect(
    { x1: item.bbox[0], y1: item.bbox[1], x2: item.bbox[2], y2: item.bbox[3] },
    { width: item.width, height: item.height },
    { width: img.clientWidth, height: img.clientHeight },
  );
  overlay.style.display = 'block';
  overlay.style.left = `${rect.left}px`;
  overlay.style.top = `${rect.top}px`;
  overlay.style.width = `${rect.width}px`;
  overlay.style.height = `${rect.height}px`;
}

function render(): void {
  const instruction = el<HTMLDivElement>('instruction');
  const counts = el<HTMLSpanElement>('counts');
  const banner = el<HTMLDivElement>('banner');
  const retryButton = el<HTMLButtonElement>('retry');
  const img = el<HTMLImageElement>('screenshot');

  if (queue === null) {
    instruction.textContent = 'loading...';
    return;
  }
  counts.textContent =
    `${queue.pendingTotal} pending / ${queue.accepted} accepted / ${queue.rejected} rejected`;
  if (queue.banner !== null) {
    banner.textContent = queue.banner;
    banner.style.display = 'block';
  } else {
    banner.style.display = 'none';
  }
  retryButton.style.display = queue.pendingDecision === null ? 'none' : 'inline-block';

  const item = queue.current;
  if (item === null) {
    instruction.textContent = queue.done ? 'queue empty, all records decided' : 'loading...';
    img.removeAttribute('src');
    positionOverlay();
    return;
  }
  instruction.textContent = item.instruction;
  if (img.getAttribute('src') !== item.image) {
    img.src = item.image;
  }
  positionOverlay();
}

async function decideCurrent(verdict: 'accept' | 'reject'): Promise<void> {
  if (queue === null) {
    return;
  }
  const note = el<HTMLInputElement>('note');
  const ok = await queue.decide(verdict, note.value.trim());
  if (ok) {
    note.value = '';
  }
  render();
}

async function retryPending(): Promise<void> {
  if (queue === null) {
    return;
  }
  await queue.retryPending();
  render();
}

async function boot(): Promise<void> {
  if (booting) {
    return;
  }
  booting = true;
  try {
    queue = new ReviewQueue(currentConfig(), policy);
    await queue.load();
  } catch (error) {
    const banner = el<HTMLDivElement>('banner');
    banner.textContent = error instanceof Error ? error.message : String(error);
    banner.style.display = 'block';
    booting = false;
    return;
  }
  booting = false;
  render();
}

function isTypingTarget(target: EventTarget | null): boolean {
  return target instanceof HTMLInputElement || target instanceof HTMLTextAreaElement;
}

function onKey(event: KeyboardEvent): void {
  if (isTypingTarget(event.target) || queue === null) {
    return;
  }
  if (event.key === 'a') {
    void decideCurrent('accept');
  } else if (event.key === 'r') {
    void decideCurrent('reject');
  } else if (event.key === 's') {
    queue.skip();
    render();
  }
}

function init(): void {
  el<HTMLButtonElement>('accept').addEventListener('click', () => void decideCurrent('accept'));
  el<HTMLButtonElement>('reject').addEventListener('click', () => void decideCurrent('reject'));
  el<HTMLButtonElement>('skipBtn').addEventListener('click', () => {
    queue?.skip();
    render();
  });
  el<HTMLButtonElement>('retry').addEventListener('click', () => void retryPending());
  el<HTMLButtonElement>('connect').addEventListener('click', () => void boot());
  el<HTMLImageElement>('screenshot').addEventListener('load', positionOverlay);
  window.addEventListener('resize', positionOverlay);
  document.addEventListener('keydown', onKey);
  void boot();
}

init();
