/** Thin DOM/SVG renderer over the pure scene, plus gesture wiring:
 * hover synchronization, the node action menu, and drag-one-node-onto-
 * another to merge.  All structural changes round-trip through the
 * server; this file only draws scenes and posts gestures. */

import { ServerClient } from "./client.js";
import { SessionModel } from "./model.js";
import { buildScene, Diagram, Scene, TextBlock } from "./scene.js";
import { defaultViewState, Hover, TextMode, ViewState } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export interface App {
  model: SessionModel;
  view: ViewState;
  client: ServerClient;
  sessionId: string | null;
  redraw: () => void;
}

export function bootstrap(root: HTMLElement, serverBase: string): App {
  const client = new ServerClient(serverBase);
  const app: App = {
    model: new SessionModel(),
    view: defaultViewState(),
    client,
    sessionId: null,
    redraw: () => render(root, app),
  };

  root.innerHTML = "";
  const bar = el("div", "toolbar");
  const input = el("input") as HTMLInputElement;
  input.placeholder = "Ask a question…";
  const askButton = button("Ask", async () => {
    if (!input.value.trim()) return;
    app.model = new SessionModel();
    app.sessionId = await client.createSession(input.value);
    void client.streamEvents(app.sessionId, 0, (event) => {
      app.model.apply(event);
      app.redraw();
    });
  });
  const viewToggle = button("Merged view", () => {
    app.view.view = app.view.view === "split" ? "merged" : "split";
    viewToggle.textContent = app.view.view === "split" ? "Merged view" : "Split view";
    app.redraw();
  });
  const saliencyToggle = button("Show all relationships", () => {
    app.view.saliency = app.view.saliency === "high" ? "all" : "high";
    saliencyToggle.textContent =
      app.view.saliency === "high" ? "Show all relationships" : "High saliency only";
    app.redraw();
  });
  const rawToggle = button("Raw annotations", () => {
    app.view.rawAnnotations = !app.view.rawAnnotations;
    app.redraw();
  });
  bar.append(input, askButton, viewToggle, saliencyToggle, rawToggle);

  const main = el("div", "main");
  root.append(bar, main);
  app.redraw = () => render(main, app);
  return app;
}

function render(main: HTMLElement, app: App): void {
  const scene = buildScene(app.model, app.view);
  main.innerHTML = "";
  const textColumn = el("div", "text-column");
  for (const block of scene.textBlocks) {
    textColumn.append(renderTextBlock(block, app));
  }
  const diagramColumn = el("div", "diagram-column");
  for (const diagram of scene.diagrams) {
    diagramColumn.append(renderDiagram(diagram, scene, app));
  }
  main.append(textColumn, diagramColumn);
}

function renderTextBlock(block: TextBlock, app: App): HTMLElement {
  const container = el("section", `text-block status-${block.status}`);
  const header = el("header");
  header.textContent = `Paragraph ${block.paragraph} · ${block.status}`;
  for (const mode of ["original", "outline", "summary"] as TextMode[]) {
    header.append(
      button(mode, () => {
        app.view.textMode[block.paragraph] = mode;
        app.redraw();
      })
    );
  }
  header.append(
    button("tell me more", () => {
      if (app.sessionId) void followGesture(app, app.client.tellMeMore(app.sessionId, block.paragraph));
    })
  );
  container.append(header);
  const body = el("div", "text-body");
  if (app.view.rawAnnotations) {
    const pre = el("pre", "raw-text");
    pre.textContent = block.rawText;
    body.append(pre);
  } else if (block.mode === "outline" && block.outline) {
    const pre = el("pre", "outline");
    pre.textContent = block.outline;
    body.append(pre);
  } else if (block.mode === "summary" && block.summary) {
    body.textContent = block.summary;
  } else {
    for (const run of block.runs) {
      const span = el("span");
      span.textContent = run.text;
      const classes = [];
      if (run.entityId != null) classes.push("entity-token");
      if (run.edgeGroup != null) classes.push("relation-token");
      if (run.greyed) classes.push("greyed");
      if (run.highlighted) classes.push("highlighted");
      span.className = classes.join(" ");
      span.addEventListener("mouseenter", () => {
        app.view.hover = {
          kind: "span",
          paragraph: block.paragraph,
          offset: run.start,
        } as Hover;
        app.redraw();
      });
      span.addEventListener("mouseleave", () => {
        app.view.hover = null;
        app.redraw();
      });
      body.append(span);
    }
  }
  container.append(body);
  return container;
}

function renderDiagram(diagram: Diagram, scene: Scene, app: App): HTMLElement {
  const wrapper = el("figure", "diagram");
  const caption = el("figcaption");
  caption.textContent =
    diagram.key === "merged"
      ? `Merged (${diagram.paragraphs.join(", ")})`
      : `Diagram ${diagram.key}`;
  wrapper.append(caption);
  const svg = document.createElementNS(SVG_NS, "svg");
  const width = Math.max(360, ...diagram.nodes.map((n) => n.x + n.width + 40));
  const height = Math.max(180, ...diagram.nodes.map((n) => n.y + n.height + 40));
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("width", String(width));
  const byId = new Map(diagram.nodes.map((n) => [n.id, n] as const));
  for (const edge of diagram.edges) {
    const source = byId.get(edge.source);
    const target = byId.get(edge.target);
    if (!source || !target) continue;
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(source.x + source.width));
    line.setAttribute("y1", String(source.y + source.height / 2));
    line.setAttribute("x2", String(target.x));
    line.setAttribute("y2", String(target.y + target.height / 2));
    line.setAttribute("stroke", edge.highlighted ? "#d97706" : "#94a3b8");
    if (edge.saliency === "L") line.setAttribute("stroke-dasharray", "4 3");
    line.addEventListener("mouseenter", () => {
      app.view.hover = { kind: "edge", edgeId: edge.edgeId };
      app.redraw();
    });
    svg.append(line);
    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("x", String((source.x + source.width + target.x) / 2));
    label.setAttribute("y", String((source.y + target.y) / 2 + 14));
    label.setAttribute("class", "edge-label");
    label.textContent = edge.label;
    svg.append(label);
  }
  for (const node of diagram.nodes) {
    const group = document.createElementNS(SVG_NS, "g");
    group.setAttribute("transform", `translate(${node.x}, ${node.y})`);
    const rect = document.createElementNS(SVG_NS, "rect");
    rect.setAttribute("width", String(node.width));
    rect.setAttribute("height", String(node.height));
    rect.setAttribute("rx", "6");
    rect.setAttribute(
      "fill",
      node.selected ? "#fde68a" : node.highlighted ? "#fef3c7" : "#e2e8f0"
    );
    if (node.placeholder) rect.setAttribute("stroke-dasharray", "5 3");
    rect.setAttribute("stroke", "#475569");
    const text = document.createElementNS(SVG_NS, "text");
    text.setAttribute("x", String(node.width / 2));
    text.setAttribute("y", String(node.height / 2 + 4));
    text.setAttribute("text-anchor", "middle");
    text.textContent = node.label;
    group.append(rect, text);
    group.addEventListener("mouseenter", () => {
      app.view.hover = { kind: "node", id: node.id };
      app.redraw();
    });
    group.addEventListener("mouseleave", () => {
      app.view.hover = null;
      app.redraw();
    });
    group.addEventListener("click", () => {
      app.view.selection = app.view.selection === node.id ? null : node.id;
      app.redraw();
    });
    wireDrag(group, app, node.id, byId);
    svg.append(group);
  }
  wrapper.append(svg);
  if (app.view.selection != null && byId.has(app.view.selection)) {
    wrapper.append(renderNodeMenu(app, byId.get(app.view.selection)!.placeholder));
  }
  return wrapper;
}

function renderNodeMenu(app: App, placeholder: boolean): HTMLElement {
  const menu = el("div", "node-menu");
  const actions: Array<"explain" | "examples" | "trim" | "collapse" | "expand"> = [
    "explain",
    "examples",
    "trim",
    "collapse",
    "expand",
  ];
  for (const action of actions) {
    const b = button(action, () => {
      if (app.sessionId == null || app.view.selection == null) return;
      void followGesture(
        app,
        app.client.nodeAction(app.sessionId, app.view.selection, action)
      );
    });
    // menu disabled on placeholder nodes
    if (placeholder) (b as HTMLButtonElement).disabled = true;
    menu.append(b);
  }
  return menu;
}

/** Drag one node onto another to merge the two. */
function wireDrag(
  group: SVGGElement,
  app: App,
  nodeId: number,
  nodes: Map<number, { x: number; y: number; width: number; height: number }>
): void {
  let dragging = false;
  group.addEventListener("pointerdown", () => {
    dragging = true;
  });
  group.addEventListener("pointerup", (event: PointerEvent) => {
    if (!dragging) return;
    dragging = false;
    const point = (event.target as SVGElement).ownerSVGElement
      ? svgPoint(event)
      : null;
    if (!point || app.sessionId == null) return;
    for (const [otherId, box] of nodes.entries()) {
      if (otherId === nodeId) continue;
      if (
        point.x >= box.x &&
        point.x <= box.x + box.width &&
        point.y >= box.y &&
        point.y <= box.y + box.height
      ) {
        void followGesture(app, app.client.mergeInto(app.sessionId, nodeId, otherId));
        return;
      }
    }
  });
}

function svgPoint(event: PointerEvent): { x: number; y: number } | null {
  const svg = (event.target as SVGElement).ownerSVGElement;
  if (!svg) return null;
  const rect = svg.getBoundingClientRect();
  return { x: event.clientX - rect.left, y: event.clientY - rect.top };
}

async function followGesture(app: App, request: Promise<string>): Promise<void> {
  await request;
  if (app.sessionId == null) return;
  // the non-follow stream closes once the gesture's effects are all in
  // the log; seq-guarded apply makes this idempotent alongside the live
  // follow stream
  const tail = await app.client.events(app.sessionId, app.model.lastSeq);
  app.model.applyAll(tail);
  app.redraw();
}

function el(tag: string, className = ""): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  return node;
}

function button(label: string, onClick: () => void): HTMLButtonElement {
  const b = document.createElement("button");
  b.textContent = label;
  b.addEventListener("click", onClick);
  return b;
}
