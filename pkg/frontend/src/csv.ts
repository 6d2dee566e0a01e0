/**
 * Parsers for the trainer's CSV export contracts.
 *
 * curves.csv:  epoch,objective,seconds        (epochs strictly increasing)
 * latents.csv: index[,label],z_1..z_Q[,var_1..var_Q]
 */

export interface CurveRow {
  epoch: number;
  objective: number;
  seconds: number;
}

export interface LatentTable {
  /** one [z_1..z_Q] row per datum */
  points: number[][];
  /** integer class labels, when the export carried them */
  labels: number[] | null;
  latentDim: number;
}

export class CsvFormatError extends Error {}

function splitLines(text: string): string[] {
  return text
    .split(/\r?\n/)
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
}

function toNumber(cell: string, file: string, line: number): number {
  const v = Number(cell);
  if (cell === "" || Number.isNaN(v)) {
    throw new CsvFormatError(`${file}: line ${line}: not a number: '${cell}'`);
  }
  return v;
}

export function parseCurveFile(text: string, file: string): CurveRow[] {
  const lines = splitLines(text);
  if (lines.length === 0) {
    throw new CsvFormatError(`${file}: empty file`);
  }
  const header = lines[0]!.split(",").map((c) => c.trim());
  if (header[0] !== "epoch" || header[1] !== "objective" || header[2] !== "seconds") {
    throw new CsvFormatError(`${file}: expected header 'epoch,objective,seconds', got '${lines[0]}'`);
  }
  const rows: CurveRow[] = [];
  for (let i = 1; i < lines.length; i++) {
    const cells = lines[i]!.split(",");
    if (cells.length !== 3) {
      throw new CsvFormatError(`${file}: line ${i + 1}: expected 3 fields, got ${cells.length}`);
    }
    rows.push({
      epoch: toNumber(cells[0]!, file, i + 1),
      objective: toNumber(cells[1]!, file, i + 1),
      seconds: toNumber(cells[2]!, file, i + 1),
    });
  }
  if (rows.length === 0) {
    throw new CsvFormatError(`${file}: no data rows`);
  }
  for (let i = 1; i < rows.length; i++) {
    if (!(rows[i]!.epoch > rows[i - 1]!.epoch)) {
      throw new CsvFormatError(`${file}: epochs must be strictly increasing at line ${i + 2}`);
    }
  }
  return rows;
}

export function parseLatentFile(text: string, file: string): LatentTable {
  const lines = splitLines(text);
  if (lines.length === 0) {
    throw new CsvFormatError(`${file}: empty file`);
  }
  const header = lines[0]!.split(",").map((c) => c.trim());
  if (header[0] !== "index") {
    throw new CsvFormatError(`${file}: expected first column 'index', got '${header[0]}'`);
  }
  const hasLabel = header[1] === "label";
  const zCols: number[] = [];
  header.forEach((name, i) => {
    if (/^z_\d+$/.test(name)) zCols.push(i);
  });
  if (zCols.length === 0) {
    throw new CsvFormatError(`${file}: no z_* columns in header`);
  }
  const points: number[][] = [];
  const labels: number[] = [];
  for (let i = 1; i < lines.length; i++) {
    const cells = lines[i]!.split(",");
    if (cells.length !== header.length) {
      throw new CsvFormatError(`${file}: line ${i + 1}: expected ${header.length} fields, got ${cells.length}`);
    }
    points.push(zCols.map((c) => toNumber(cells[c]!, file, i + 1)));
    if (hasLabel) {
      labels.push(toNumber(cells[1]!, file, i + 1));
    }
  }
  if (points.length === 0) {
    throw new CsvFormatError(`${file}: no data rows`);
  }
  return { points, labels: hasLabel ? labels : null, latentDim: zCols.length };
}
