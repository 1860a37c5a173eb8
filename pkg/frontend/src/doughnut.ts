/** SVG doughnut with exactly two segments: positive (green), negative (red).
 *
 * Percentages derive only from the two counts; a zero/zero payload renders
 * an empty-state ring instead of segments.
 */

const SVG_NS = "http://www.w3.org/2000/svg";
const SIZE = 120;
const RADIUS = 44;
const STROKE = 22;
const CIRCUMFERENCE = 2 * Math.PI * RADIUS;

export const POSITIVE_COLOR = "#2e7d32";
export const NEGATIVE_COLOR = "#c62828";

function ringCircle(className: string, color: string): SVGCircleElement {
  const circle = document.createElementNS(SVG_NS, "circle");
  circle.setAttribute("class", className);
  circle.setAttribute("cx", String(SIZE / 2));
  circle.setAttribute("cy", String(SIZE / 2));
  circle.setAttribute("r", String(RADIUS));
  circle.setAttribute("fill", "none");
  circle.setAttribute("stroke", color);
  circle.setAttribute("stroke-width", String(STROKE));
  return circle;
}

export function renderDoughnut(positive: number, negative: number): SVGSVGElement {
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("class", "doughnut");
  svg.setAttribute("viewBox", `0 0 ${SIZE} ${SIZE}`);
  svg.setAttribute("role", "img");

  const total = positive + negative;
  if (total === 0) {
    const ring = ringCircle("segment-empty", "#d0d0d0");
    svg.appendChild(ring);
    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("class", "empty-label");
    label.setAttribute("x", String(SIZE / 2));
    label.setAttribute("y", String(SIZE / 2));
    label.setAttribute("text-anchor", "middle");
    label.setAttribute("dominant-baseline", "middle");
    label.textContent = "no data yet";
    svg.appendChild(label);
    return svg;
  }

  const fraction = positive / total;
  // start both arcs at 12 o'clock; the negative arc begins where the
  // positive one ends
  const rotate = `rotate(-90 ${SIZE / 2} ${SIZE / 2})`;

  const pos = ringCircle("segment-positive", POSITIVE_COLOR);
  pos.setAttribute("transform", rotate);
  pos.setAttribute(
    "stroke-dasharray",
    `${CIRCUMFERENCE * fraction} ${CIRCUMFERENCE}`,
  );
  pos.dataset.fraction = fraction.toFixed(4);
  svg.appendChild(pos);

  const neg = ringCircle("segment-negative", NEGATIVE_COLOR);
  neg.setAttribute("transform", rotate);
  neg.setAttribute(
    "stroke-dasharray",
    `${CIRCUMFERENCE * (1 - fraction)} ${CIRCUMFERENCE}`,
  );
  neg.setAttribute("stroke-dashoffset", String(-CIRCUMFERENCE * fraction));
  neg.dataset.fraction = (1 - fraction).toFixed(4);
  svg.appendChild(neg);

  return svg;
}
