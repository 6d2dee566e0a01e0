/** Write an SVG scene to disk as .svg, or rasterize to .png via resvg. */

import { writeFile } from "node:fs/promises";
import { extname } from "node:path";

export async function writeImage(svg: string, outPath: string): Promise<void> {
  const ext = extname(outPath).toLowerCase();
  if (ext === ".svg" || ext === "") {
    await writeFile(outPath, svg, "utf8");
    return;
  }
  if (ext === ".png") {
    const { Resvg } = await import("@resvg/resvg-js");
    const png = new Resvg(svg).render().asPng();
    await writeFile(outPath, png);
    return;
  }
  throw new Error(`unsupported output extension '${ext}' (use .svg or .png)`);
}
